import express, { type Express, type Request, type Response } from "express";
import { ZodError } from "zod";

import {
  embedText,
  generateText,
  labelScores,
  looksLikeReply,
  type Generator,
} from "./models.js";
import {
  EmbedRequest,
  errorBody,
  GenerateRequest,
  LabelsRequest,
} from "./wire.js";

export interface AppConfig {
  d: number;
  version: string;
  // Injection point for tests and for swapping in a real model later;
  // the wire contract stays the same either way.
  generator?: Generator;
}

export function buildApp(config: AppConfig): Express {
  const { d, version } = config;
  const generator = config.generator ?? generateText;
  const app = express();
  app.use(express.json({ limit: "2mb" }));

  app.get("/healthz", (_req: Request, res: Response) => {
    res.json({ version, d });
  });

  app.post("/generate", (req: Request, res: Response) => {
    const parsed = GenerateRequest.safeParse(req.body);
    if (!parsed.success) {
      res.status(400).json(errorBody("invalid_request", zodMessage(parsed.error)));
      return;
    }
    const { prompt, max_tokens, temperature, constraint } = parsed.data;
    const text = generator({
      prompt,
      maxTokens: max_tokens,
      temperature,
      replyOnly: constraint.reply_only,
    });
    if (constraint.reply_only && !looksLikeReply(text)) {
      res
        .status(422)
        .json(
          errorBody(
            "reply_only_violation",
            "generated text reads as a top-level post, not a reply",
          ),
        );
      return;
    }
    res.json({ text });
  });

  app.post("/embed", (req: Request, res: Response) => {
    const parsed = EmbedRequest.safeParse(req.body);
    if (!parsed.success) {
      res.status(400).json(errorBody("invalid_request", zodMessage(parsed.error)));
      return;
    }
    const vectors = parsed.data.texts.map((text) => embedText(text, d));
    res.json({ vectors, d });
  });

  app.post("/labels", (req: Request, res: Response) => {
    const parsed = LabelsRequest.safeParse(req.body);
    if (!parsed.success) {
      res.status(400).json(errorBody("invalid_request", zodMessage(parsed.error)));
      return;
    }
    const result = labelScores(parsed.data.texts, parsed.data.category);
    if (!result) {
      res
        .status(400)
        .json(errorBody("unknown_category", `no label model for ${parsed.data.category}`));
      return;
    }
    res.json({ subclass_names: result.names, scores: result.scores });
  });

  app.use((_req: Request, res: Response) => {
    res.status(404).json(errorBody("not_found", "no such endpoint"));
  });

  // Express calls this on malformed JSON bodies and anything a handler
  // throws; keep the error JSON shape either way.
  app.use((err: unknown, _req: Request, res: Response, _next: express.NextFunction) => {
    if (err instanceof SyntaxError) {
      res.status(400).json(errorBody("invalid_json", "request body is not valid JSON"));
      return;
    }
    const message = err instanceof Error ? err.message : String(err);
    res.status(500).json(errorBody("internal", message));
  });

  return app;
}

function zodMessage(error: ZodError): string {
  const first = error.issues[0];
  return first ? `${first.path.join(".") || "body"}: ${first.message}` : "invalid body";
}
