/**
 * Entry point: serve the y = 2x + 1 fitting task until a client sends
 * SHUTDOWN, then exit 0.  The one flag is --endpoint HOST:PORT; port 0 binds
 * an ephemeral port and the chosen one is printed as "serving on HOST:PORT".
 */

import { linearTask } from "./task.js";
import { serveFitTask } from "./server.js";

function usage(message: string): never {
  process.stderr.write(`${message}\n`);
  process.stderr.write("usage: fitserver [--endpoint HOST:PORT]\n");
  process.exit(2);
}

function parseArgs(argv: string[]): { endpoint: string } {
  let endpoint = "127.0.0.1:0";
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]!;
    if (arg === "--endpoint") {
      const value = argv[++i];
      if (value === undefined) {
        usage("--endpoint needs a HOST:PORT value");
      }
      endpoint = value;
    } else if (arg.startsWith("--endpoint=")) {
      endpoint = arg.slice("--endpoint=".length);
    } else {
      usage(`unknown argument ${JSON.stringify(arg)}`);
    }
  }
  return { endpoint };
}

async function main(): Promise<number> {
  const { endpoint } = parseArgs(process.argv.slice(2));
  let handle;
  try {
    handle = await serveFitTask(endpoint, linearTask());
  } catch (err) {
    process.stderr.write(`cannot serve on ${endpoint}: ${err}\n`);
    return 1;
  }
  console.log(`serving on ${handle.endpoint()}`);
  await handle.waitClosed();
  return 0;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(`${err}\n`);
    process.exit(1);
  },
);
