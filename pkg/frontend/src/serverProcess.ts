/**
 * Helper to run a gridshield protocol server as a child process.
 *
 * Binds port 0 and parses the server's `listening on host:port` line, so
 * parallel servers never collide.  Used by the training smoke and the
 * conformance tests; production deployments run `gridshield serve`
 * themselves.
 */

import { ChildProcess, spawn } from "child_process";

export interface ServerHandle {
  host: string;
  port: number;
  proc: ChildProcess;
  stop(): Promise<void>;
}

const BOOTSTRAP =
  "import sys; from gridshield.cli import main; sys.exit(main(sys.argv[1:]))";

export function startServer(
  configPath?: string,
  python: string = process.env.GRIDSHIELD_PYTHON ?? "python3",
  bootTimeoutMs = 60_000
): Promise<ServerHandle> {
  const args = ["-c", BOOTSTRAP];
  if (configPath) args.push("--config", configPath);
  args.push("serve", "--endpoint", "tcp://127.0.0.1:0");

  return new Promise((resolve, reject) => {
    const proc = spawn(python, args, { stdio: ["ignore", "pipe", "pipe"] });
    let stdout = "";
    let stderr = "";
    let settled = false;

    const timer = setTimeout(() => {
      if (settled) return;
      settled = true;
      proc.kill("SIGKILL");
      reject(new Error(`server did not come up within ${bootTimeoutMs} ms`));
    }, bootTimeoutMs);

    proc.stdout!.setEncoding("utf8");
    proc.stderr!.setEncoding("utf8");
    proc.stderr!.on("data", (chunk: string) => {
      stderr += chunk;
    });
    proc.stdout!.on("data", (chunk: string) => {
      stdout += chunk;
      const m = stdout.match(/listening on ([^:\s]+):(\d+)/);
      if (m && !settled) {
        settled = true;
        clearTimeout(timer);
        resolve({
          host: m[1],
          port: Number(m[2]),
          proc,
          stop: () =>
            new Promise<void>((done) => {
              proc.once("exit", () => done());
              proc.kill("SIGTERM");
              setTimeout(() => proc.kill("SIGKILL"), 5_000).unref();
            }),
        });
      }
    });
    proc.once("exit", (code) => {
      if (settled) return;
      settled = true;
      clearTimeout(timer);
      reject(
        new Error(`server exited with code ${code} before listening:\n${stderr}`)
      );
    });
    proc.once("error", (err) => {
      if (settled) return;
      settled = true;
      clearTimeout(timer);
      reject(err);
    });
  });
}
