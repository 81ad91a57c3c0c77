/**
 * TCP experiment server for a data-fitting task.
 *
 * Speaks the newline-JSON request-reply protocol: CONFIG advertises the
 * primitive table, EXPERIMENT scores a batch of prefix expressions, SHUTDOWN
 * stops the server.  One client connection is served at a time; a malformed
 * frame gets an ERROR reply and the connection stays open.
 */

import * as net from "node:net";

import { decodeFrame, encodeFrame, Frame, FrameError } from "./protocol.js";
import { FitTask, scoreExpression } from "./task.js";

export function parseEndpoint(endpoint: string): { host: string; port: number } {
  const cut = endpoint.lastIndexOf(":");
  if (cut <= 0) {
    throw new Error(`endpoint must look like host:port, got ${JSON.stringify(endpoint)}`);
  }
  const host = endpoint.slice(0, cut);
  const portText = endpoint.slice(cut + 1);
  if (!/^\d+$/.test(portText)) {
    throw new Error(`invalid port in endpoint ${JSON.stringify(endpoint)}`);
  }
  const port = Number(portText);
  if (port > 65535) {
    throw new Error(`port out of range in endpoint ${JSON.stringify(endpoint)}`);
  }
  return { host, port };
}

export interface ServerHandle {
  /** Actual bound host:port; meaningful when the requested port was 0. */
  endpoint(): string;
  /** Resolves once the server has stopped (SHUTDOWN served or close()). */
  waitClosed(): Promise<void>;
  close(): void;
}

export function serveFitTask(
  endpoint: string,
  task: FitTask,
): Promise<ServerHandle> {
  const { host, port } = parseEndpoint(endpoint);
  const server = net.createServer();
  const sockets = new Set<net.Socket>();
  let active: net.Socket | null = null;
  let shuttingDown = false;

  const closed = new Promise<void>((resolve) => {
    server.on("close", () => resolve());
  });

  function reply(socket: net.Socket, frame: Frame): void {
    socket.write(encodeFrame(frame));
  }

  function dispatch(socket: net.Socket, request: Frame): void {
    try {
      switch (request.action) {
        case "CONFIG":
          reply(socket, {
            action: "CONFIG",
            payload: { primitives: task.primitives, constants: [...task.constants] },
          });
          return;
        case "EXPERIMENT": {
          const batch = request.payload;
          if (
            !Array.isArray(batch) ||
            !batch.every((e) => typeof e === "string")
          ) {
            reply(socket, {
              action: "ERROR",
              payload: "EXPERIMENT payload must be a list of expression strings",
            });
            return;
          }
          const fitness = batch.map((text) => scoreExpression(task, text));
          reply(socket, { action: "EXPERIMENT", payload: { fitness } });
          return;
        }
        case "SHUTDOWN":
          shuttingDown = true;
          reply(socket, { action: "SHUTDOWN", payload: {} });
          socket.end();
          server.close();
          return;
        default:
          reply(socket, {
            action: "ERROR",
            payload: `unexpected action ${JSON.stringify(request.action)}`,
          });
      }
    } catch (err) {
      reply(socket, { action: "ERROR", payload: `handler failure: ${err}` });
    }
  }

  server.on("connection", (socket) => {
    sockets.add(socket);
    socket.on("error", () => socket.destroy());
    // one client at a time; latecomers are told so instead of hanging
    if (active !== null) {
      socket.resume(); // discard whatever they sent so the FIN gets seen
      socket.end(
        encodeFrame({ action: "ERROR", payload: "server busy, one connection at a time" }),
      );
      socket.on("close", () => sockets.delete(socket));
      return;
    }
    active = socket;
    let buffer = Buffer.alloc(0);
    socket.on("data", (chunk) => {
      buffer = Buffer.concat([buffer, chunk]);
      // one request per line; anything after a newline is the next frame
      for (;;) {
        const cut = buffer.indexOf(0x0a);
        if (cut < 0 || shuttingDown) {
          break;
        }
        const line = buffer.subarray(0, cut);
        buffer = buffer.subarray(cut + 1);
        let request: Frame;
        try {
          request = decodeFrame(line);
        } catch (err) {
          if (err instanceof FrameError) {
            reply(socket, { action: "ERROR", payload: err.message });
            continue;
          }
          throw err;
        }
        dispatch(socket, request);
      }
    });
    socket.on("close", () => {
      sockets.delete(socket);
      if (active === socket) {
        active = null;
      }
    });
  });

  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, host, () => {
      server.removeListener("error", reject);
      const addr = server.address() as net.AddressInfo;
      resolve({
        endpoint: () => `${addr.address}:${addr.port}`,
        waitClosed: () => closed,
        close: () => {
          for (const socket of sockets) {
            socket.destroy();
          }
          server.close();
        },
      });
    });
  });
}
