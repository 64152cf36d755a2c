import { z } from "zod";

// Request shapes. Unknown keys are stripped rather than rejected so an
// additive client change does not break older services.

export const GenerateRequest = z.object({
  prompt: z.string().min(1),
  max_tokens: z.number().int().min(1).max(4096).default(64),
  temperature: z.number().min(0).max(2).default(0.7),
  constraint: z.object({ reply_only: z.boolean() }).default({ reply_only: false }),
});
export type GenerateRequest = z.infer<typeof GenerateRequest>;

export const EmbedRequest = z.object({
  texts: z.array(z.string()),
});
export type EmbedRequest = z.infer<typeof EmbedRequest>;

export const LabelsRequest = z.object({
  texts: z.array(z.string()),
  category: z.string().min(1),
});
export type LabelsRequest = z.infer<typeof LabelsRequest>;

// Response shapes, used by the test suite to hold the service to its own
// contract. The harness on the other side of the wire validates against
// the same structure.

export const GenerateResponse = z.object({ text: z.string() });

export const EmbedResponse = z.object({
  vectors: z.array(z.array(z.number())),
  d: z.number().int().min(1),
});

export const LabelsResponse = z.object({
  subclass_names: z.array(z.string()).min(1),
  scores: z.array(z.array(z.number().min(0).max(1))),
});

export const HealthResponse = z.object({
  version: z.string(),
  d: z.number().int().min(1),
});

export const ErrorResponse = z.object({
  error: z.object({ code: z.string(), message: z.string() }),
});

export function errorBody(code: string, message: string) {
  return { error: { code, message } };
}
