"""vsrkit: a self-contained CNN inference engine and recurrent video
super-resolution toolkit with quality metrics and throughput estimation."""

from .tensor import (
    DTYPE,
    ShapeError,
    bilinear_resize,
    concat_channels,
    pad_zero,
    pixel_shuffle,
    space_to_depth,
    tensor_new,
)
from .conv import (
    BACKENDS,
    ConvKernel,
    activation,
    conv2d,
    conv2d_gemm,
    conv2d_naive,
    conv2d_winograd,
    conv_transpose2d,
    gemm,
    im2col,
    maxpool2,
)
from .graph import (
    BatchNormParams,
    CostReport,
    GraphError,
    Layer,
    NetworkGraph,
    activation_layer,
    batch_norm_layer,
    batchnorm_forward,
    bilinear_up_layer,
    bn_to_1x1,
    concat_layer,
    conv2d_layer,
    conv_transpose2d_layer,
    count_flops,
    count_params,
    fuse_conv_bn,
    graph_forward,
    init_random,
    maxpool2_layer,
    pixel_shuffle_layer,
    residual_add_layer,
    resize_layer,
    space_to_depth_layer,
)
from .models import (
    FNetConfig,
    SRNetConfig,
    build_control_srnet,
    build_fnet,
    build_generator,
    build_srnet,
)
from .pipeline import RecurrentState, upscale_frames, vsr_run, vsr_step, warp
from .metrics import (
    FlowResult,
    MetricRecord,
    RandomFeatureDistance,
    ScoreWeights,
    default_perceptual_distance,
    dense_flow,
    evaluate_sequence,
    luma,
    normalize_metric,
    psnr,
    quality_score,
    score_table,
    ssim,
    tlp,
    tof,
)
from .bench import (
    BenchResult,
    FpgaProfile,
    conv_flops,
    conventions,
    emit_report,
    fpga_max_flops,
    fpga_table,
    theoretical_fps,
    time_pipeline,
)
from .model_io import ModelFormatError, load_bundle, load_model, save_model
from .frame_io import (
    FrameFormatError,
    read_f32,
    read_ppm,
    read_sequence,
    write_f32,
    write_ppm,
    write_sequence,
)

__version__ = "0.1.0"
