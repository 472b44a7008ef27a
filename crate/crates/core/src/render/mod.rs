//! Differentiable volume rendering of RGB and expected depth.

mod camera;
mod composite;
mod depth;
mod volume;

pub use camera::{Camera, Intrinsics, Ray};
pub use composite::{composite, composite_ray, composite_ray_backward, RayOutput, RaySampleBatch};
pub use depth::{depth_style_input_backward, render_depth_style_input};
pub use volume::{
    backward_rays, backward_view, render_rays, render_view, render_view_stream, sample_rays, RayGrad,
    RenderOptions, RenderedView, WeightPenalty,
};
