//! On-disk calibration formats: the landmark CSV exchanged with the survey
//! crew and the versioned calibration artifact consumed by the runtime.

use super::{CameraCalibration, CameraId, FisheyeIntrinsics, GeoError, Homography, LandmarkPair, PixelPoint, WorldPoint};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Schema version of the calibration artifact this build writes.
const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct IntrinsicsDoc {
    cx: f64,
    cy: f64,
    f: f64,
    k1: f64,
    k2: f64,
    k3: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct OriginDoc {
    lat: f64,
    lon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationDoc {
    version: u32,
    camera_id: CameraId,
    intrinsics: IntrinsicsDoc,
    /// Row-major 3x3 homography, undistorted pixels to tangent-plane meters.
    homography: [f64; 9],
    scene_origin: OriginDoc,
    mean_error_m: f64,
}

/// Serializes a calibration to the versioned JSON artifact.
///
/// The lens field of view is deployment configuration rather than a fit
/// result, so it is not part of the artifact; [`read_calibration`] takes it
/// as a parameter.
pub fn write_calibration(calib: &CameraCalibration, w: impl Write) -> Result<(), GeoError> {
    let doc = CalibrationDoc {
        version: ARTIFACT_VERSION,
        camera_id: calib.camera_id,
        intrinsics: IntrinsicsDoc {
            cx: calib.intrinsics.cx,
            cy: calib.intrinsics.cy,
            f: calib.intrinsics.f,
            k1: calib.intrinsics.k1,
            k2: calib.intrinsics.k2,
            k3: calib.intrinsics.k3,
        },
        homography: calib.homography.to_row_major(),
        scene_origin: OriginDoc {
            lat: calib.scene_origin.lat_deg,
            lon: calib.scene_origin.lon_deg,
        },
        mean_error_m: calib.mean_error_m,
    };
    serde_json::to_writer_pretty(w, &doc)?;
    Ok(())
}

/// Parses a calibration artifact. `theta_max` supplies the configured lens
/// field of view (radians), against which the stored radial polynomial is
/// re-validated.
pub fn read_calibration(r: impl Read, theta_max: f64) -> Result<CameraCalibration, GeoError> {
    let doc: CalibrationDoc = serde_json::from_reader(r)?;
    if doc.version != ARTIFACT_VERSION {
        return Err(GeoError::InvalidData(format!(
            "unsupported calibration artifact version {}",
            doc.version
        )));
    }
    let i = &doc.intrinsics;
    let intrinsics = FisheyeIntrinsics::new(i.cx, i.cy, i.f, i.k1, i.k2, i.k3, theta_max)?;
    let homography = Homography::from_row_major(&doc.homography)?;
    if !doc.mean_error_m.is_finite() || doc.mean_error_m < 0.0 {
        return Err(GeoError::InvalidData(format!("bad mean_error_m {}", doc.mean_error_m)));
    }
    Ok(CameraCalibration::from_parts(
        doc.camera_id,
        intrinsics,
        homography,
        WorldPoint::new(doc.scene_origin.lat, doc.scene_origin.lon),
        doc.mean_error_m,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct LandmarkRow {
    camera_id: String,
    u_px: f64,
    v_px: f64,
    lat_deg: f64,
    lon_deg: f64,
}

/// Parses a landmark survey CSV (`camera_id,u_px,v_px,lat_deg,lon_deg`).
pub fn read_landmark_csv(r: impl Read) -> Result<Vec<LandmarkPair>, GeoError> {
    let mut reader = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<LandmarkRow>().enumerate() {
        let row = row?;
        let camera_id: CameraId = row
            .camera_id
            .parse()
            .map_err(|_| GeoError::InvalidData(format!("row {}: bad camera id {:?}", i + 1, row.camera_id)))?;
        if !(row.lat_deg.abs() <= 90.0 && row.lon_deg.abs() <= 180.0) {
            return Err(GeoError::InvalidData(format!(
                "row {}: lat/lon ({}, {}) out of range",
                i + 1,
                row.lat_deg,
                row.lon_deg
            )));
        }
        if !row.u_px.is_finite() || !row.v_px.is_finite() {
            return Err(GeoError::InvalidData(format!("row {}: non-finite pixel", i + 1)));
        }
        out.push(LandmarkPair {
            camera_id,
            pixel: PixelPoint::new(row.u_px, row.v_px),
            world: WorldPoint::new(row.lat_deg, row.lon_deg),
        });
    }
    Ok(out)
}

/// Writes landmarks in the survey CSV format.
pub fn write_landmark_csv(landmarks: &[LandmarkPair], w: impl Write) -> Result<(), GeoError> {
    let mut writer = csv::Writer::from_writer(w);
    for lm in landmarks {
        writer.serialize(LandmarkRow {
            camera_id: lm.camera_id.label().to_string(),
            u_px: lm.pixel.u,
            v_px: lm.pixel.v,
            lat_deg: lm.world.lat_deg,
            lon_deg: lm.world.lon_deg,
        })?;
    }
    writer.flush().map_err(GeoError::Io)?;
    Ok(())
}

/// Convenience file-path wrappers.
pub fn read_calibration_file(path: impl AsRef<Path>, theta_max: f64) -> Result<CameraCalibration, GeoError> {
    read_calibration(std::fs::File::open(path)?, theta_max)
}

pub fn write_calibration_file(calib: &CameraCalibration, path: impl AsRef<Path>) -> Result<(), GeoError> {
    write_calibration(calib, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_calibration() -> CameraCalibration {
        let intr = FisheyeIntrinsics::new(640.0, 480.0, 420.0, 1.0, -0.05, 0.002, 1.3).unwrap();
        let h = Homography::from_row_major(&[
            0.05, 0.002, -33.0,
            -0.003, -0.055, 29.0,
            1.0e-5, 2.0e-5, 1.0,
        ])
        .unwrap();
        CameraCalibration::from_parts(
            CameraId::SouthWest,
            intr,
            h,
            WorldPoint::new(42.2808, -83.7430),
            0.42,
        )
    }

    #[test]
    fn calibration_artifact_round_trip() {
        let calib = sample_calibration();
        let mut buf = Vec::new();
        write_calibration(&calib, &mut buf).unwrap();
        let loaded = read_calibration(buf.as_slice(), 1.3).unwrap();
        assert_eq!(loaded.camera_id, calib.camera_id);
        assert_eq!(loaded.intrinsics, calib.intrinsics);
        assert_eq!(loaded.homography.to_row_major(), calib.homography.to_row_major());
        assert_eq!(loaded.mean_error_m, calib.mean_error_m);
        assert_eq!(loaded.scene_origin, calib.scene_origin);
    }

    #[test]
    fn artifact_version_is_checked() {
        let calib = sample_calibration();
        let mut buf = Vec::new();
        write_calibration(&calib, &mut buf).unwrap();
        let tampered = String::from_utf8(buf).unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            read_calibration(tampered.as_bytes(), 1.3),
            Err(GeoError::InvalidData(_))
        ));
    }

    #[test]
    fn landmark_csv_round_trip() {
        let lms = vec![
            LandmarkPair {
                camera_id: CameraId::NorthEast,
                pixel: PixelPoint::new(512.25, 300.5),
                world: WorldPoint::new(42.280810, -83.743005),
            },
            LandmarkPair {
                camera_id: CameraId::SouthEast,
                pixel: PixelPoint::new(100.0, 801.0),
                world: WorldPoint::new(42.280301, -83.742511),
            },
        ];
        let mut buf = Vec::new();
        write_landmark_csv(&lms, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("camera_id,u_px,v_px,lat_deg,lon_deg"));
        let loaded = read_landmark_csv(buf.as_slice()).unwrap();
        assert_eq!(loaded, lms);
    }

    #[test]
    fn landmark_csv_rejects_bad_rows() {
        let bad_cam = "camera_id,u_px,v_px,lat_deg,lon_deg\nXX,1.0,2.0,42.0,-83.0\n";
        assert!(read_landmark_csv(bad_cam.as_bytes()).is_err());
        let bad_lat = "camera_id,u_px,v_px,lat_deg,lon_deg\nNE,1.0,2.0,142.0,-83.0\n";
        assert!(read_landmark_csv(bad_lat.as_bytes()).is_err());
    }
}
