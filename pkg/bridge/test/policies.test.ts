import { describe, expect, it } from "vitest";

import {
  CorrectorParams,
  CorrectorPolicy,
  NoTargetVisible,
  PlannerParams,
  PlannerPolicy,
  buildPolicies,
} from "../src/policies.js";
import { WireObservation } from "../src/protocol.js";

const CONTROL_DT = 1 / 30;

function plannerParams(overrides: Partial<PlannerParams> = {}): PlannerParams {
  return {
    target_pos: [0.42, 0.02, 0.08],
    target_quat: [1, 0, 0, 0],
    stop_pos_m: 0.001,
    stop_rot_sin_half: Math.sin(0.015 / 2),
    gain_per_s: 2.0,
    control_dt: CONTROL_DT,
    max_step_m: 0.25 * CONTROL_DT,
    max_rot_step: 1.5 * CONTROL_DT,
    approach_gripper: 0,
    stop_distance_m: 0.0,
    drift_bias: [0, 0, 0],
    ...overrides,
  };
}

function correctorParams(overrides: Partial<CorrectorParams> = {}): CorrectorParams {
  return {
    expected_width_m: 0.004,
    seated_latch_index: 2,
    approach_stop_m: 0.001,
    lift_rise_m: 0.03,
    gain_per_s: 2.0,
    control_dt: CONTROL_DT,
    max_step_m: 0.25 * CONTROL_DT,
    close_byte: 250,
    open_byte: 0,
    width_tol_m: 1e-4,
    ...overrides,
  };
}

function obs(overrides: Partial<WireObservation> = {}): WireObservation {
  return {
    tcp_pos_m: [0.45, 0.0, 0.3],
    tcp_quat_wxyz: [1, 0, 0, 0],
    grip_cmd_m: 0.085,
    grip_obs_m: 0.085,
    target_disp_m: [-0.03, 0.02, -0.22],
    latches: [true, false, true],
    ...overrides,
  };
}

describe("planner policy", () => {
  it("moves along the displacement direction, clipped to the step budget", () => {
    const planner = new PlannerPolicy(plannerParams(), true);
    const a = planner.act(obs());
    const d = [0.42 - 0.45, 0.02 - 0.0, 0.08 - 0.3];
    const n = Math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    const m = Math.sqrt(
      a.deltaPos[0] ** 2 + a.deltaPos[1] ** 2 + a.deltaPos[2] ** 2,
    );
    expect(m).toBeCloseTo(0.25 * CONTROL_DT, 12);
    const cos =
      (a.deltaPos[0] * d[0] + a.deltaPos[1] * d[1] + a.deltaPos[2] * d[2]) / (m * n);
    expect(cos).toBeGreaterThan(1 - 1e-9);
    expect(a.gripper).toBe(0);
  });

  it("emits the stop byte at the trigger pose", () => {
    const planner = new PlannerPolicy(plannerParams(), true);
    const a = planner.act(obs({ tcp_pos_m: [0.42, 0.02, 0.08] }));
    expect(a.gripper).toBe(255);
    expect(a.deltaPos).toEqual([0, 0, 0]);
  });

  it("never emits the stop byte when built as never-stops", () => {
    const pair = buildPolicies("never-stops", plannerParams(), correctorParams());
    const a = pair.planner.act(obs({ tcp_pos_m: [0.42, 0.02, 0.08] }));
    expect(a.gripper).toBe(0);
    expect(a.deltaPos).toEqual([0, 0, 0]);
  });

  it("stops-early variant signals well short of the target", () => {
    const pair = buildPolicies("stops-early", plannerParams(), correctorParams());
    const a = pair.planner.act(obs({ tcp_pos_m: [0.42, 0.02, 0.105] }));
    expect(a.gripper).toBe(255); // 25 mm out, inside the 30 mm early-stop ball
  });
});

describe("corrector policy", () => {
  it("raises when the component is still seated", () => {
    const corr = new CorrectorPolicy(correctorParams());
    expect(() => corr.act(obs())).toThrow(NoTargetVisible);
  });

  it("walks approach, close, lift, stop on a free component", () => {
    const corr = new CorrectorPolicy(correctorParams());
    // free component 10 cm away
    let a = corr.act(
      obs({ latches: [false, true, false], target_disp_m: [0.1, 0, 0] }),
    );
    expect(a.gripper).toBe(0);
    expect(a.deltaPos[0]).toBeGreaterThan(0);
    // at the grasp point: close
    a = corr.act(obs({ latches: [false, true, false], target_disp_m: [0, 0, 0] }));
    expect(a.gripper).toBe(250);
    expect(a.deltaPos).toEqual([0, 0, 0]);
    // fingers saturated at the component width under a deeper command: lift
    a = corr.act(
      obs({
        latches: [false, true, false],
        grip_cmd_m: 0.0,
        grip_obs_m: 0.004,
        tcp_pos_m: [0.5, 0.0, 0.005],
        target_disp_m: [0, 0, 0],
      }),
    );
    expect(a.gripper).toBe(250);
    expect(a.deltaPos[2]).toBeGreaterThan(0);
    // lifted by the rise: stop token
    a = corr.act(
      obs({
        latches: [false, true, false],
        grip_cmd_m: 0.0,
        grip_obs_m: 0.004,
        tcp_pos_m: [0.5, 0.0, 0.0351],
        target_disp_m: [0, 0, 0],
      }),
    );
    expect(a.gripper).toBe(255);
  });

  it("reopens and retries after closing on nothing", () => {
    const corr = new CorrectorPolicy(correctorParams());
    corr.act(obs({ latches: [false, true, false], target_disp_m: [0, 0, 0] }));
    const a = corr.act(
      obs({
        latches: [false, true, false],
        grip_cmd_m: 0.0,
        grip_obs_m: 0.0,
        target_disp_m: [0.01, 0, 0],
      }),
    );
    expect(a.gripper).toBe(0); // reopen
  });

  it("reset returns to the approach phase", () => {
    const corr = new CorrectorPolicy(correctorParams());
    corr.act(obs({ latches: [false, true, false], target_disp_m: [0, 0, 0] }));
    corr.reset(5);
    expect(() => corr.act(obs())).toThrow(NoTargetVisible); // seated guard again
  });
});
