/**
 * Reference external policy server.
 *
 * Speaks the version-1 newline-delimited JSON protocol over stdio or a
 * single-connection TCP socket: one request line in, one response line out,
 * strictly ordered. Malformed requests get an error response and the
 * connection stays open; a {"reset": seed} control line reseeds the stub
 * policies. The served policy and its parameters come from the command line,
 * so an orchestrator can spawn this process per trial with the exact
 * parameter block its in-process policies would use.
 *
 * Usage:
 *   node dist/server.js --transport stdio --policy echo-oracle \
 *       --seed 0 --params '<json>'
 *   node dist/server.js --transport tcp --port 0 ...   # prints LISTENING <port>
 */

import * as net from "node:net";
import * as process from "node:process";
import * as readline from "node:readline";

import {
  CorrectorParams,
  NoTargetVisible,
  PlannerParams,
  PlannerVariant,
  PolicyPair,
  buildPolicies,
} from "./policies.js";
import {
  ProtocolViolation,
  WireRequest,
  encodeAction,
  encodeError,
  encodeResetAck,
  parseRequest,
} from "./protocol.js";

interface ServerConfig {
  transport: "stdio" | "tcp";
  port: number;
  policy: PlannerVariant;
  seed: number;
  plannerParams: PlannerParams;
  correctorParams: CorrectorParams;
}

function parseArgs(argv: string[]): ServerConfig {
  const get = (flag: string): string | undefined => {
    const i = argv.indexOf(flag);
    return i >= 0 && i + 1 < argv.length ? argv[i + 1] : undefined;
  };
  const transport = (get("--transport") ?? "stdio") as ServerConfig["transport"];
  if (transport !== "stdio" && transport !== "tcp") {
    throw new Error(`unknown transport ${transport}`);
  }
  const policy = (get("--policy") ?? "echo-oracle") as PlannerVariant;
  if (!["echo-oracle", "stops-early", "never-stops"].includes(policy)) {
    throw new Error(`unknown policy ${policy}`);
  }
  const raw = get("--params");
  if (!raw) {
    throw new Error("--params '<json>' with planner/corrector blocks is required");
  }
  const params = JSON.parse(raw) as {
    planner: PlannerParams;
    corrector: CorrectorParams;
  };
  return {
    transport,
    port: Number(get("--port") ?? "0"),
    policy,
    seed: Number(get("--seed") ?? "0"),
    plannerParams: params.planner,
    correctorParams: params.corrector,
  };
}

export function handleLine(policies: PolicyPair, line: string): string {
  let parsed: WireRequest | { reset: number };
  try {
    parsed = parseRequest(line);
  } catch (err) {
    if (err instanceof ProtocolViolation) {
      return encodeError(err.message);
    }
    throw err;
  }
  if ("reset" in parsed) {
    policies.reset(parsed.reset);
    return encodeResetAck(parsed.reset);
  }
  try {
    const action =
      parsed.role === "planner"
        ? policies.planner.act(parsed.obs)
        : policies.corrector.act(parsed.obs);
    return encodeAction(action);
  } catch (err) {
    if (err instanceof NoTargetVisible) {
      return encodeError("no_target_visible");
    }
    return encodeError(`policy failure: ${(err as Error).message}`);
  }
}

function serveStdio(policies: PolicyPair): void {
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    if (line.trim().length === 0) {
      return;
    }
    process.stdout.write(handleLine(policies, line) + "\n");
  });
  rl.on("close", () => process.exit(0));
}

function serveTcp(policies: PolicyPair, port: number): void {
  let busy = false;
  const server = net.createServer((socket) => {
    if (busy) {
      socket.destroy(); // single connection, single in-flight request
      return;
    }
    busy = true;
    const rl = readline.createInterface({ input: socket, terminal: false });
    rl.on("line", (line) => {
      if (line.trim().length === 0) {
        return;
      }
      socket.write(handleLine(policies, line) + "\n");
    });
    socket.on("close", () => {
      busy = false;
    });
    socket.on("error", () => {
      busy = false;
    });
  });
  server.listen(port, "127.0.0.1", () => {
    const addr = server.address() as net.AddressInfo;
    process.stdout.write(`LISTENING ${addr.port}\n`);
  });
}

export function main(): void {
  const config = parseArgs(process.argv.slice(2));
  const policies = buildPolicies(config.policy, config.plannerParams, config.correctorParams);
  policies.reset(config.seed);
  if (config.transport === "stdio") {
    serveStdio(policies);
  } else {
    serveTcp(policies, config.port);
  }
}

const isDirectRun =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (isDirectRun) {
  main();
}
