//! View containment, geographic to pixel mapping, and distances.
//!
//! Pixel mapping is linear in latitude and longitude (equirectangular):
//! views are small city-scale rectangles that never cross a pole or the
//! antimeridian. View boundaries are inclusive.

use thiserror::Error;

use crate::events::{GeoCoord, LocationEvent, MapView};

/// Mean Earth radius used for great-circle distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("coordinate ({0}, {1}) lies outside the view")]
    OutOfView(f64, f64),
    #[error("pixel ({0}, {1}) lies outside the image")]
    OutOfImage(f64, f64),
}

/// Image position with the origin at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

pub fn contains(view: &MapView, c: GeoCoord) -> bool {
    view.bottom_right.latitude <= c.latitude
        && c.latitude <= view.top_left.latitude
        && view.top_left.longitude <= c.longitude
        && c.longitude <= view.bottom_right.longitude
}

pub fn to_pixel(view: &MapView, c: GeoCoord) -> Result<PixelPoint, GeoError> {
    if !contains(view, c) {
        return Err(GeoError::OutOfView(c.latitude, c.longitude));
    }
    let (tl, br) = (view.top_left, view.bottom_right);
    let x =
        (c.longitude - tl.longitude) / (br.longitude - tl.longitude) * f64::from(view.image_width);
    let y = (tl.latitude - c.latitude) / (tl.latitude - br.latitude) * f64::from(view.image_height);
    Ok(PixelPoint { x, y })
}

pub fn from_pixel(view: &MapView, p: PixelPoint) -> Result<GeoCoord, GeoError> {
    let (w, h) = (f64::from(view.image_width), f64::from(view.image_height));
    if !(p.x.is_finite() && p.y.is_finite() && (0.0..=w).contains(&p.x) && (0.0..=h).contains(&p.y))
    {
        return Err(GeoError::OutOfImage(p.x, p.y));
    }
    let (tl, br) = (view.top_left, view.bottom_right);
    Ok(GeoCoord::new(
        tl.latitude - p.y / h * (tl.latitude - br.latitude),
        tl.longitude + p.x / w * (br.longitude - tl.longitude),
    ))
}

/// Great-circle distance in metres.
pub fn haversine_m(a: GeoCoord, b: GeoCoord) -> f64 {
    let (phi1, phi2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.longitude - a.longitude).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Whether any point of the trail falls inside the view. No clipping of
/// the segments between points.
pub fn trail_intersects_view(trail: &[LocationEvent], view: &MapView) -> bool {
    trail.iter().any(|p| contains(view, p.location))
}
