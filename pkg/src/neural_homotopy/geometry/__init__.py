"""SDF sources, sampling, meshing and point-cloud I/O."""
from .mesh import (
    TriangleMesh,
    chamfer,
    connected_components,
    fibonacci_directions,
    marching_cubes,
    measure_radius,
    mesh_area,
    ray_roots,
    read_obj,
    sample_surface,
    write_obj,
)
from .pointcloud import load_point_cloud, save_ply, save_xyz
from .sampling import (
    OrientedPointCloud,
    SampleBatch,
    SimilarityTransform,
    cloud_indices,
    draw_batch,
    sample_cloud,
    split_counts,
)
from .sdf import (
    ANALYTIC_SHAPES,
    Box,
    Capsule,
    ClosedForm,
    CloudFit,
    Dumbbell,
    Slice,
    Sphere,
    Torus,
    eikonal_error,
    sdf_eval,
    sdf_value,
)
