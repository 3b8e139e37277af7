/**
 * HTTP scoring service.
 *
 * POST /v1/logprob  {model, context, continuation} -> {tokens, logprobs, total}
 * POST /v1/generate {model, prompt, max_tokens, stop} -> {text}
 * GET  /v1/health   -> {model, ok}
 *
 * 400 schema violation, 422 request over the context budget, 503 while the
 * model is not ready; error bodies are {error}. Model execution is funneled
 * through a single FIFO queue; the HTTP layer accepts concurrent connections.
 */

import express, { type Express } from "express";
import { z } from "zod";

import { HashLm, loadModel, tokenizeBytes } from "./model.js";

export interface ServerConfig {
  model: string;
  device: string;
  host: string;
  port: number;
  maxLen: number;
  dtype: "f32" | "f64";
}

export const DEFAULTS: ServerConfig = {
  model: "hashlm-v1",
  device: "cpu",
  host: "127.0.0.1",
  port: 8311,
  maxLen: 8192,
  dtype: "f64",
};

const logprobSchema = z.object({
  model: z.string(),
  context: z.string(),
  continuation: z.string(),
});

const generateSchema = z.object({
  model: z.string(),
  prompt: z.string(),
  max_tokens: z.number().int().min(1),
  stop: z.array(z.string()).default([]),
});

/** One-at-a-time execution queue for model work. */
class SerialQueue {
  private tail: Promise<unknown> = Promise.resolve();

  run<T>(task: () => T): Promise<T> {
    const next = this.tail.then(() => task());
    this.tail = next.catch(() => undefined);
    return next;
  }
}

export function createApp(config: ServerConfig): Express {
  if (config.device !== "cpu") {
    throw new Error(`unsupported device ${JSON.stringify(config.device)}; only "cpu" is built in`);
  }
  const model: HashLm = loadModel(config.model, config.dtype);
  const queue = new SerialQueue();
  const app = express();
  app.use(express.json({ limit: "16mb" }));

  // malformed JSON bodies surface here as a schema violation
  app.use((err: unknown, _req: express.Request, res: express.Response, next: express.NextFunction) => {
    if (err instanceof SyntaxError) {
      res.status(400).json({ error: "request body is not valid JSON" });
      return;
    }
    next(err);
  });

  app.get("/v1/health", (_req, res) => {
    res.json({ model: config.model, ok: true });
  });

  app.post("/v1/logprob", async (req, res) => {
    const parsed = logprobSchema.safeParse(req.body);
    if (!parsed.success) {
      res.status(400).json({ error: `schema violation: ${parsed.error.issues[0]?.message}` });
      return;
    }
    const { model: requested, context, continuation } = parsed.data;
    if (requested !== config.model) {
      res.status(503).json({ error: `model ${requested} is not loaded (serving ${config.model})` });
      return;
    }
    const totalLen = tokenizeBytes(context + continuation).length;
    if (totalLen > config.maxLen) {
      res.status(422).json({
        error: `request of ${totalLen} tokens exceeds the context budget of ${config.maxLen}`,
      });
      return;
    }
    const scores = await queue.run(() => model.scoreContinuation(context, continuation));
    res.json(scores);
  });

  app.post("/v1/generate", async (req, res) => {
    const parsed = generateSchema.safeParse(req.body);
    if (!parsed.success) {
      res.status(400).json({ error: `schema violation: ${parsed.error.issues[0]?.message}` });
      return;
    }
    const { model: requested, prompt, max_tokens, stop } = parsed.data;
    if (requested !== config.model) {
      res.status(503).json({ error: `model ${requested} is not loaded (serving ${config.model})` });
      return;
    }
    if (tokenizeBytes(prompt).length + max_tokens > config.maxLen) {
      res.status(422).json({ error: "prompt plus max_tokens exceeds the context budget" });
      return;
    }
    const text = await queue.run(() => model.generate(prompt, max_tokens, stop));
    res.json({ text });
  });

  return app;
}

export function serve(config: ServerConfig): Promise<import("node:http").Server> {
  const app = createApp(config);
  return new Promise((resolve, reject) => {
    const server = app.listen(config.port, config.host, () => {
      console.log(
        `serving ${config.model} [${config.dtype}] on ` +
          `http://${config.host}:${config.port} (max ${config.maxLen} tokens)`,
      );
      resolve(server);
    });
    server.on("error", reject);
  });
}
