"""Two-layer mesh radiance fields: extraction, distillation, baked assets."""

__version__ = "0.1.0"

from . import backend
from .field import (
    Bounds,
    DensityGrid,
    Ray,
    VolumetricField,
    bake_grid,
    composite,
    make_scene,
    render_field_image,
    sample_density,
    sample_radiance,
    volume_render,
)
from .geometry import (
    DuplexGeometry,
    FeatureMesh,
    TriangleMesh,
    attach_features,
    extract_duplex,
    filter_components,
    marching_cubes,
    perturb_vertices,
)
from .camera import (
    Camera,
    PoseBounds,
    camera_to_spherical,
    load_transforms_manifest,
    project,
    ray_for_pixel,
    sample_distillation_poses,
    save_transforms_manifest,
    spherical_to_camera,
)
from .raster import (
    BVH,
    GBuffer,
    Hit,
    build_bvh,
    intersect,
    intersect_brute,
    interpolate_feature,
    rasterize,
    scatter_feature_gradient,
)
from .shading import (
    ConvLayer,
    ShadingNet,
    assemble_input,
    conv_forward,
    init_net,
    net_backward,
    net_forward,
    positional_encode,
    preset_spec,
)
from .train import (
    Checkpoint,
    NumericalError,
    OptimizerState,
    TrainConfig,
    adam_step,
    lr_schedule,
    mse_loss,
    render_prediction,
    train,
)
from .metrics import ImageF, psnr, ssim
from .assets import export_bundle, import_bundle, pack_conv_weights, unpack_conv_weights
