// Forward kinematics of the 7-joint arm, used only for drawing. The chain
// mirrors the server's arm description file: alternating z/y/z/-y/z/y/z
// joints with the four named offsets along the parent z-axis, camera along
// the flange z-axis.

export interface ArmDescription {
  link_offsets_mm: [number, number, number, number];
  tool_offset_mm: number;
}

export type Vec3 = [number, number, number];
type Mat3 = number[]; // row-major 3x3

const I3: Mat3 = [1, 0, 0, 0, 1, 0, 0, 0, 1];

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array(9).fill(0);
  for (let r = 0; r < 3; r++)
    for (let c = 0; c < 3; c++)
      out[3 * r + c] = a[3 * r] * b[c] + a[3 * r + 1] * b[3 + c] + a[3 * r + 2] * b[6 + c];
  return out;
}

function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
    m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
    m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
  ];
}

function rotZ(a: number): Mat3 {
  const c = Math.cos(a);
  const s = Math.sin(a);
  return [c, -s, 0, s, c, 0, 0, 0, 1];
}

function rotY(a: number): Mat3 {
  const c = Math.cos(a);
  const s = Math.sin(a);
  return [c, 0, s, 0, 1, 0, -s, 0, c];
}

const AXES: Array<(q: number) => Mat3> = [
  rotZ,
  rotY,
  rotZ,
  (q) => rotY(-q),
  rotZ,
  rotY,
  rotZ,
];

export interface ArmPose {
  joints_mm: Vec3[]; // base, shoulder, elbow, wrist, flange
  flange_mm: Vec3;
  tip_mm: Vec3;
  camera_axis: Vec3;
}

export function forwardKinematics(arm: ArmDescription, q: number[]): ArmPose {
  const [dBs, dSe, dEw, dWf] = arm.link_offsets_mm;
  const mounts: Vec3[] = [
    [0, 0, 0],
    [0, 0, dBs],
    [0, 0, 0],
    [0, 0, dSe],
    [0, 0, 0],
    [0, 0, dEw],
    [0, 0, 0],
  ];
  let R: Mat3 = I3;
  let p: Vec3 = [0, 0, 0];
  const joints: Vec3[] = [[0, 0, 0]];
  for (let i = 0; i < 7; i++) {
    const step = matVec(R, mounts[i]);
    p = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
    if (mounts[i][2] !== 0) joints.push([...p]);
    R = matMul(R, AXES[i](q[i] ?? 0));
  }
  const flangeStep = matVec(R, [0, 0, dWf]);
  const flange: Vec3 = [p[0] + flangeStep[0], p[1] + flangeStep[1], p[2] + flangeStep[2]];
  joints.push([...flange]);
  const axis: Vec3 = [R[2], R[5], R[8]];
  const tip: Vec3 = [
    flange[0] + arm.tool_offset_mm * axis[0],
    flange[1] + arm.tool_offset_mm * axis[1],
    flange[2] + arm.tool_offset_mm * axis[2],
  ];
  return { joints_mm: joints, flange_mm: flange, tip_mm: tip, camera_axis: axis };
}
