// Typed mirrors of the HTTP API payloads.  Every response is validated
// against its schema before it reaches application state, so a drifting
// server surfaces as an explicit decode error rather than NaNs in a chart.

import { z } from "zod";

export const PsaPointSchema = z.object({
  time: z.number(),
  psa: z.number().positive(),
});

export const BiopsySchema = z.object({
  time: z.number(),
  upgraded: z.boolean(),
});

export const PatientSchema = z.object({
  id: z.string(),
  age: z.number(),
  psa: z.array(PsaPointSchema),
  biopsies: z.array(BiopsySchema),
  upgraded: z.boolean(),
  last_biopsy_time: z.number(),
  last_psa_time: z.number(),
  version: z.number().int(),
});

export const SurvivalPointSchema = z.object({
  u: z.number(),
  prob: z.number().min(0).max(1),
});

export const SurvivalCurveSchema = z.object({
  patient_id: z.string(),
  t: z.number(),
  s: z.number(),
  points: z.array(SurvivalPointSchema),
  pairs: z.number().int(),
});

export const PsaFitPointSchema = z.object({
  time: z.number(),
  mean: z.number(),
  low: z.number(),
  high: z.number(),
});

export const PsaFitSchema = z.object({
  patient_id: z.string(),
  points: z.array(PsaFitPointSchema),
  observed: z.array(PsaPointSchema),
  log2_scale: z.boolean(),
});

export const ProposalDiagnosticsSchema = z.object({
  expected: z.number().nullable(),
  median: z.number().nullable(),
  sd: z.number().nullable(),
  q025: z.number().nullable(),
  kappa_used: z.number().nullable(),
  hybrid_fallback: z.boolean(),
  tail_dominated: z.boolean(),
  censored_at_horizon: z.boolean(),
});

export const DecisionPreviewSchema = z.object({
  action: z.enum(["conduct", "defer"]),
  time: z.number(),
});

export const ProposalSchema = z.object({
  patient_id: z.string(),
  policy: z.string(),
  u: z.number(),
  t: z.number(),
  s: z.number(),
  diagnostics: ProposalDiagnosticsSchema,
  decision_preview: DecisionPreviewSchema.nullable().optional(),
});

export const ApiErrorSchema = z.object({
  detail: z.string(),
  errors: z
    .array(z.object({ field: z.string(), message: z.string() }))
    .optional(),
});

export type PsaPoint = z.infer<typeof PsaPointSchema>;
export type Biopsy = z.infer<typeof BiopsySchema>;
export type Patient = z.infer<typeof PatientSchema>;
export type SurvivalCurve = z.infer<typeof SurvivalCurveSchema>;
export type PsaFit = z.infer<typeof PsaFitSchema>;
export type Proposal = z.infer<typeof ProposalSchema>;
export type ApiErrorBody = z.infer<typeof ApiErrorSchema>;

export type PolicyName =
  | "annual"
  | "prias"
  | "exp"
  | "med"
  | "dyn_risk"
  | "hybrid";
