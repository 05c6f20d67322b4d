// Maps 2D pointer motion plus scroll-wheel depth onto operator-frame meters.
//
// The drag is expressed as a robot-frame displacement from the tip position
// captured at pinch start (screen right = +x, screen up = +y, scroll = z),
// then pulled back through the inverse calibration so the server's
// normalize -> transform -> scale pipeline reproduces exactly that
// displacement. With no calibration loaded the operator frame is the robot
// frame in meters.

import type { Vec3 } from "./kinematics";

export interface CalibrationInfo {
  rotation_wxyz: [number, number, number, number];
  translation_mm: Vec3;
}

const IDENTITY: CalibrationInfo = {
  rotation_wxyz: [1, 0, 0, 0],
  translation_mm: [0, 0, 0],
};

function rotMatrix(q: [number, number, number, number]): number[] {
  const [w, x, y, z] = q;
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
  ];
}

export class PointerMapper {
  mmPerPixel: number;
  mmPerWheelNotch: number;
  private calibration: CalibrationInfo;

  constructor(mmPerPixel = 0.5, mmPerWheelNotch = 2.0) {
    this.mmPerPixel = mmPerPixel;
    this.mmPerWheelNotch = mmPerWheelNotch;
    this.calibration = IDENTITY;
  }

  setCalibration(c: CalibrationInfo | null) {
    this.calibration = c ?? IDENTITY;
  }

  /** Robot-frame displacement (mm) for accumulated pointer/scroll deltas. */
  dragDisplacementMm(dxPx: number, dyPx: number, wheelNotches: number): Vec3 {
    return [
      dxPx * this.mmPerPixel,
      -dyPx * this.mmPerPixel, // screen y grows downward
      wheelNotches * this.mmPerWheelNotch,
    ];
  }

  /** Operator-frame sample (meters) for a desired robot-frame point (mm). */
  toOperatorMeters(robotMm: Vec3): Vec3 {
    const R = rotMatrix(this.calibration.rotation_wxyz);
    const t = this.calibration.translation_mm;
    const d: Vec3 = [robotMm[0] - t[0], robotMm[1] - t[1], robotMm[2] - t[2]];
    // R^T (p - t), then meters
    return [
      (R[0] * d[0] + R[3] * d[1] + R[6] * d[2]) / 1000,
      (R[1] * d[0] + R[4] * d[1] + R[7] * d[2]) / 1000,
      (R[2] * d[0] + R[5] * d[1] + R[8] * d[2]) / 1000,
    ];
  }
}
