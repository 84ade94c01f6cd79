/**
 * Line-framed NDJSON client over a TCP socket.
 *
 * The server answers every request frame with exactly one response line on
 * the same connection, so responses are matched to requests in FIFO order.
 * A per-request timeout guards against a stalled server; on timeout the
 * connection state is unknown, so the socket is destroyed and every pending
 * request is rejected.
 */

import * as net from "net";
import { decodeFrame, encodeFrame, ProtocolError, Request, Response } from "./protocol";

interface Pending {
  resolve: (r: Response) => void;
  reject: (err: Error) => void;
  timer: NodeJS.Timeout;
}

export class NdjsonClient {
  private socket: net.Socket | null = null;
  private buffer = "";
  private pending: Pending[] = [];
  private closed = false;

  constructor(
    readonly host: string,
    readonly port: number,
    readonly timeoutMs: number = 30_000
  ) {}

  connect(): Promise<void> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host: this.host, port: this.port });
      socket.setEncoding("utf8");
      socket.once("connect", () => {
        socket.removeListener("error", reject);
        this.socket = socket;
        socket.on("data", (chunk: string) => this.onData(chunk));
        socket.on("error", (err: Error) => this.failAll(err));
        socket.on("close", () =>
          this.failAll(new ProtocolError("connection closed by server"))
        );
        resolve();
      });
      socket.once("error", reject);
    });
  }

  get isOpen(): boolean {
    return this.socket !== null && !this.closed;
  }

  /** Send one request frame and await its single response line. */
  request(req: Request): Promise<Response> {
    return this.requestRaw(encodeFrame(req));
  }

  /** Send raw text (not necessarily valid JSON) and await one response line. */
  requestRaw(line: string): Promise<Response> {
    if (!this.socket || this.closed) {
      return Promise.reject(new ProtocolError("client is not connected"));
    }
    const socket = this.socket;
    return new Promise<Response>((resolve, reject) => {
      const timer = setTimeout(() => {
        const i = this.pending.findIndex((p) => p.timer === timer);
        if (i >= 0) this.pending.splice(i, 1);
        this.destroy();
        reject(new ProtocolError(`no response within ${this.timeoutMs} ms`));
      }, this.timeoutMs);
      this.pending.push({ resolve, reject, timer });
      socket.write(line.endsWith("\n") ? line : line + "\n");
    });
  }

  private onData(chunk: string): void {
    this.buffer += chunk;
    let nl: number;
    while ((nl = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, nl).trim();
      this.buffer = this.buffer.slice(nl + 1);
      if (line === "") continue;
      const p = this.pending.shift();
      if (!p) continue; // unsolicited line; protocol is request/response only
      clearTimeout(p.timer);
      try {
        p.resolve(decodeFrame(line));
      } catch (err) {
        p.reject(err as Error);
      }
    }
  }

  private failAll(err: Error): void {
    if (this.closed) return;
    this.closed = true;
    for (const p of this.pending.splice(0)) {
      clearTimeout(p.timer);
      p.reject(err);
    }
  }

  /** Tear the socket down without the close handshake. */
  destroy(): void {
    if (this.socket) {
      this.socket.destroy();
      this.socket = null;
    }
    this.failAll(new ProtocolError("connection destroyed"));
  }

  /** Graceful close: best-effort close frame, then end the socket. */
  async close(): Promise<void> {
    if (!this.socket || this.closed) return;
    try {
      await this.request({ op: "close" });
    } catch {
      // the socket may already be gone; destruction below is enough
    }
    this.closed = true;
    this.socket?.end();
    this.socket = null;
  }
}
