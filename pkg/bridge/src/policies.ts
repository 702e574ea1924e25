/**
 * Scripted stub policies mirroring the in-process reference implementations.
 *
 * Every arithmetic expression keeps the reference evaluation order exactly
 * (subtract, then add bias; square-sum left to right; scale after the norm
 * test), using only IEEE-754 +,-,*,/ and sqrt, so a trial driven over the
 * wire reproduces the in-process action stream bit for bit. The planner's
 * rotation steering uses the small-angle 2*vec(q_err) form for the same
 * reason: no trig calls whose last-ulp rounding could differ across runtimes.
 */

import { WireAction, WireObservation } from "./protocol.js";

export const GRIPPER_STOP = 255;

export interface PlannerParams {
  target_pos: [number, number, number];
  target_quat: [number, number, number, number];
  stop_pos_m: number;
  stop_rot_sin_half: number;
  gain_per_s: number;
  control_dt: number;
  max_step_m: number;
  max_rot_step: number;
  approach_gripper: number;
  stop_distance_m: number;
  drift_bias: [number, number, number];
}

export interface CorrectorParams {
  expected_width_m: number;
  seated_latch_index: number;
  approach_stop_m: number;
  lift_rise_m: number;
  gain_per_s: number;
  control_dt: number;
  max_step_m: number;
  close_byte: number;
  open_byte: number;
  width_tol_m: number;
}

export class NoTargetVisible extends Error {}

const ZERO: [number, number, number] = [0, 0, 0];

export type PlannerVariant = "echo-oracle" | "stops-early" | "never-stops";

export class PlannerPolicy {
  constructor(
    private readonly p: PlannerParams,
    private readonly emitStop: boolean,
  ) {}

  reset(_seed: number): void {
    // stateless: the stub runs noise-free, the seed only acknowledges resets
  }

  act(obs: WireObservation): WireAction {
    const p = this.p;
    const dx = p.target_pos[0] - obs.tcp_pos_m[0] + p.drift_bias[0];
    const dy = p.target_pos[1] - obs.tcp_pos_m[1] + p.drift_bias[1];
    const dz = p.target_pos[2] - obs.tcp_pos_m[2] + p.drift_bias[2];
    const dist = Math.sqrt(dx * dx + dy * dy + dz * dz);

    const aw = obs.tcp_quat_wxyz[0];
    const ax = -obs.tcp_quat_wxyz[1];
    const ay = -obs.tcp_quat_wxyz[2];
    const az = -obs.tcp_quat_wxyz[3];
    const [bw, bx, by, bz] = p.target_quat;
    const ew = aw * bw - ax * bx - ay * by - az * bz;
    let ex = aw * bx + ax * bw + ay * bz - az * by;
    let ey = aw * by - ax * bz + ay * bw + az * bx;
    let ez = aw * bz + ax * by - ay * bx + az * bw;
    if (ew < 0.0) {
      ex = -ex;
      ey = -ey;
      ez = -ez;
    }
    const s = Math.sqrt(ex * ex + ey * ey + ez * ez);

    const stopPos = p.stop_distance_m > 0.0 ? p.stop_distance_m : p.stop_pos_m;
    if (dist <= stopPos && s <= p.stop_rot_sin_half) {
      if (this.emitStop) {
        return { deltaPos: ZERO, deltaRot: ZERO, gripper: GRIPPER_STOP };
      }
      return { deltaPos: ZERO, deltaRot: ZERO, gripper: p.approach_gripper };
    }

    const k = p.gain_per_s * p.control_dt;
    let mx = dx * k;
    let my = dy * k;
    let mz = dz * k;
    const m = Math.sqrt(mx * mx + my * my + mz * mz);
    if (m > p.max_step_m) {
      const f = p.max_step_m / m;
      mx = mx * f;
      my = my * f;
      mz = mz * f;
    }
    let rx = 2.0 * ex * k;
    let ry = 2.0 * ey * k;
    let rz = 2.0 * ez * k;
    const r = Math.sqrt(rx * rx + ry * ry + rz * rz);
    if (r > p.max_rot_step) {
      const f = p.max_rot_step / r;
      rx = rx * f;
      ry = ry * f;
      rz = rz * f;
    }
    return { deltaPos: [mx, my, mz], deltaRot: [rx, ry, rz], gripper: p.approach_gripper };
  }
}

enum Phase {
  Approach,
  Close,
  Lift,
  Done,
}

export class CorrectorPolicy {
  private phase = Phase.Approach;
  private liftFrom: number | null = null;

  constructor(private readonly p: CorrectorParams) {}

  reset(_seed: number): void {
    this.phase = Phase.Approach;
    this.liftFrom = null;
  }

  private held(obs: WireObservation): boolean {
    const p = this.p;
    return (
      Math.abs(obs.grip_obs_m - p.expected_width_m) <= p.width_tol_m &&
      obs.grip_cmd_m < p.expected_width_m - p.width_tol_m
    );
  }

  act(obs: WireObservation): WireAction {
    const p = this.p;
    if (this.phase === Phase.Approach) {
      if (obs.latches[p.seated_latch_index] && !this.held(obs)) {
        throw new NoTargetVisible("component is still seated; nothing to recover");
      }
      if (this.held(obs)) {
        this.phase = Phase.Lift;
        this.liftFrom = obs.tcp_pos_m[2];
      } else {
        const [dx, dy, dz] = obs.target_disp_m;
        const dist = Math.sqrt(dx * dx + dy * dy + dz * dz);
        if (dist <= p.approach_stop_m) {
          this.phase = Phase.Close;
        } else {
          const k = p.gain_per_s * p.control_dt;
          let mx = dx * k;
          let my = dy * k;
          let mz = dz * k;
          const m = Math.sqrt(mx * mx + my * my + mz * mz);
          if (m > p.max_step_m) {
            const f = p.max_step_m / m;
            mx = mx * f;
            my = my * f;
            mz = mz * f;
          }
          return { deltaPos: [mx, my, mz], deltaRot: ZERO, gripper: p.open_byte };
        }
      }
    }
    if (this.phase === Phase.Close) {
      if (this.held(obs)) {
        this.phase = Phase.Lift;
        this.liftFrom = obs.tcp_pos_m[2];
      } else if (obs.grip_obs_m < p.expected_width_m - 2.0 * p.width_tol_m) {
        this.phase = Phase.Approach; // fingers closed past the component: retry
        return { deltaPos: ZERO, deltaRot: ZERO, gripper: p.open_byte };
      } else {
        return { deltaPos: ZERO, deltaRot: ZERO, gripper: p.close_byte };
      }
    }
    if (this.phase === Phase.Lift) {
      const top = (this.liftFrom as number) + p.lift_rise_m;
      const remaining = top - obs.tcp_pos_m[2];
      if (remaining <= 1e-6) {
        this.phase = Phase.Done;
      } else {
        let mz = remaining * (p.gain_per_s * p.control_dt);
        if (mz > p.max_step_m) {
          mz = p.max_step_m;
        }
        return { deltaPos: [0, 0, mz], deltaRot: ZERO, gripper: p.close_byte };
      }
    }
    return { deltaPos: ZERO, deltaRot: ZERO, gripper: GRIPPER_STOP };
  }
}

export interface PolicyPair {
  planner: PlannerPolicy;
  corrector: CorrectorPolicy;
  reset(seed: number): void;
}

export function buildPolicies(
  variant: PlannerVariant,
  plannerParams: PlannerParams,
  correctorParams: CorrectorParams,
): PolicyPair {
  const params = { ...plannerParams };
  if (variant === "stops-early" && params.stop_distance_m <= 0.0) {
    params.stop_distance_m = 0.03;
  }
  const planner = new PlannerPolicy(params, variant !== "never-stops");
  const corrector = new CorrectorPolicy(correctorParams);
  return {
    planner,
    corrector,
    reset(seed: number): void {
      planner.reset(seed);
      corrector.reset(seed);
    },
  };
}
