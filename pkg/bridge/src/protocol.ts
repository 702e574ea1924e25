/**
 * Wire protocol: newline-delimited JSON, one request per line, one response
 * per line, strict ordering. Version 1.
 *
 * Request: {v, role: "planner"|"corrector", instruction, obs, tick}
 * Response: {v, delta_pos_m: [3], delta_rot_aa: [3], gripper: 0..250|255}
 * Errors: {v, error: string}; the connection stays open.
 * Control: {"reset": seed} acknowledged as {v, reset: seed}.
 */

export const PROTOCOL_VERSION = 1;

export interface WireObservation {
  tcp_pos_m: [number, number, number];
  tcp_quat_wxyz: [number, number, number, number];
  grip_cmd_m: number;
  grip_obs_m: number;
  target_disp_m: [number, number, number];
  latches: [boolean, boolean, boolean];
}

export interface WireRequest {
  v: number;
  role: "planner" | "corrector";
  instruction: string;
  obs: WireObservation;
  tick: number;
}

export interface WireAction {
  deltaPos: [number, number, number];
  deltaRot: [number, number, number];
  gripper: number;
}

export class ProtocolViolation extends Error {}

function isVec(x: unknown, n: number): x is number[] {
  return Array.isArray(x) && x.length === n && x.every((v) => typeof v === "number" && Number.isFinite(v));
}

function isBoolVec(x: unknown, n: number): x is boolean[] {
  return Array.isArray(x) && x.length === n && x.every((v) => typeof v === "boolean");
}

export function parseRequest(line: string): WireRequest | { reset: number } {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new ProtocolViolation(`unparseable request: ${(err as Error).message}`);
  }
  if (typeof raw !== "object" || raw === null) {
    throw new ProtocolViolation("request must be an object");
  }
  const obj = raw as Record<string, unknown>;
  if (typeof obj.reset === "number" && Number.isInteger(obj.reset)) {
    return { reset: obj.reset };
  }
  if (obj.v !== PROTOCOL_VERSION) {
    throw new ProtocolViolation(`unsupported protocol version ${JSON.stringify(obj.v)}`);
  }
  if (obj.role !== "planner" && obj.role !== "corrector") {
    throw new ProtocolViolation(`unknown role ${JSON.stringify(obj.role)}`);
  }
  if (typeof obj.instruction !== "string" || obj.instruction.length === 0) {
    throw new ProtocolViolation("instruction must be a non-empty string");
  }
  if (typeof obj.tick !== "number" || !Number.isInteger(obj.tick)) {
    throw new ProtocolViolation("tick must be an integer");
  }
  const obs = obj.obs as Record<string, unknown> | undefined;
  if (typeof obs !== "object" || obs === null) {
    throw new ProtocolViolation("obs missing");
  }
  if (
    !isVec(obs.tcp_pos_m, 3) ||
    !isVec(obs.tcp_quat_wxyz, 4) ||
    typeof obs.grip_cmd_m !== "number" ||
    typeof obs.grip_obs_m !== "number" ||
    !isVec(obs.target_disp_m, 3) ||
    !isBoolVec(obs.latches, 3)
  ) {
    throw new ProtocolViolation("obs fields malformed");
  }
  return obj as unknown as WireRequest;
}

export function encodeAction(a: WireAction): string {
  return JSON.stringify({
    v: PROTOCOL_VERSION,
    delta_pos_m: a.deltaPos,
    delta_rot_aa: a.deltaRot,
    gripper: a.gripper,
  });
}

export function encodeError(message: string): string {
  return JSON.stringify({ v: PROTOCOL_VERSION, error: message });
}

export function encodeResetAck(seed: number): string {
  return JSON.stringify({ v: PROTOCOL_VERSION, reset: seed });
}
