use crate::error::{Error, Result};
use crate::geom::{project_points, CameraModel, PointCloud};
use crate::io::MaskletFrame;

/// Instance ID of the raster pixel each point projects into; 0 outside the frustum.
pub fn lift_mask(frame: &MaskletFrame, cloud: &PointCloud, cam: &CameraModel) -> Result<Vec<u32>> {
    let (w, h) = cam.image_size();
    if (frame.width, frame.height) != (w, h) {
        return Err(Error::SizeMismatch(format!(
            "raster {}x{} vs camera {w}x{h}",
            frame.width, frame.height
        )));
    }
    let mut ids = vec![0u32; cloud.len()];
    for (i, u, v) in project_points(cloud, cam) {
        ids[i] = frame.id_at(u.floor() as u32, v.floor() as u32);
    }
    Ok(ids)
}
