/**
 * Entry point: parse startup flags and run the service.
 *
 *   node dist/main.js --model hashlm-v1 --host 127.0.0.1 --port 8311 \
 *                     --max-len 8192 --device cpu --dtype f64
 */

import { availableModels } from "./model.js";
import { DEFAULTS, serve, type ServerConfig } from "./server.js";

function parseArgs(argv: string[]): ServerConfig {
  const config: ServerConfig = { ...DEFAULTS };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    const next = () => {
      const value = argv[++i];
      if (value === undefined) throw new Error(`${arg} needs a value`);
      return value;
    };
    switch (arg) {
      case "--model":
        config.model = next();
        break;
      case "--device":
        config.device = next();
        break;
      case "--host":
        config.host = next();
        break;
      case "--port":
        config.port = Number.parseInt(next(), 10);
        break;
      case "--max-len":
        config.maxLen = Number.parseInt(next(), 10);
        break;
      case "--dtype": {
        const value = next();
        if (value !== "f32" && value !== "f64") throw new Error(`--dtype must be f32 or f64`);
        config.dtype = value;
        break;
      }
      case "--help":
        console.log(
          `usage: main.js [--model NAME] [--device cpu] [--host H] [--port P] ` +
            `[--max-len N] [--dtype f32|f64]\nmodels: ${availableModels().join(", ")}`,
        );
        process.exit(0);
        break;
      default:
        throw new Error(`unknown flag ${arg}`);
    }
  }
  if (!Number.isFinite(config.port) || config.port < 0 || config.port > 65535) {
    throw new Error(`invalid port`);
  }
  if (!Number.isFinite(config.maxLen) || config.maxLen < 1) {
    throw new Error(`invalid --max-len`);
  }
  return config;
}

async function main(): Promise<void> {
  let config: ServerConfig;
  try {
    config = parseArgs(process.argv.slice(2));
    await serve(config);
  } catch (err) {
    console.error(`fatal: ${(err as Error).message}`);
    process.exit(1);
  }
}

void main();
