/** Zod schemas for the rewrite-service wire formats. These mirror the HTTP
 * API exactly; nothing here invents new formats. */

import { z } from "zod";

export const SongRecord = z.object({
  title: z.string().nullable().optional(),
  lines: z.array(z.string().min(1)).min(1),
});
export type SongRecord = z.infer<typeof SongRecord>;

export const Span = z.object({
  sentence: z.number().int().nonnegative(),
  start: z.number().int().nonnegative(),
  length: z.number().int().positive(),
});
export type Span = z.infer<typeof Span>;

export const RequiredVowel = z.object({
  sentence: z.number().int().nonnegative(),
  token: z.number().int().nonnegative(),
  vowel: z.string().min(1),
});
export type RequiredVowel = z.infer<typeof RequiredVowel>;

export const MAX_KEYWORDS = 5;

export const MaskSpec = z.object({
  spans: z.array(Span).default([]),
  required_vowels: z.array(RequiredVowel).default([]),
  keywords: z.array(z.string().min(1)).max(MAX_KEYWORDS).default([]),
});
export type MaskSpec = z.infer<typeof MaskSpec>;

export const DecodeKnobs = z.object({
  lambda: z.number().positive().default(1.4),
  gamma: z.number().positive().default(0.3),
  k: z.number().int().positive().default(32),
  vowel_mode: z.enum(["soft", "hard"]).default("soft"),
  temperature: z.number().positive().default(1.0),
});
export type DecodeKnobs = z.infer<typeof DecodeKnobs>;

export const RewriteResponse = z.object({
  song: SongRecord,
  provenance: z.array(z.array(z.enum(["original", "generated"]))),
  end_tokens: z.array(z.string()),
  end_vowels: z.array(z.string()),
  fallback_events: z.array(z.record(z.string(), z.unknown())),
  conflicts: z.array(z.record(z.string(), z.unknown())),
  seed: z.number().int(),
});
export type RewriteResponse = z.infer<typeof RewriteResponse>;

export const Meta = z.object({
  vowels: z.array(z.string()),
  num_vowel_classes: z.number().int(),
  defaults: z.object({
    lambda: z.number(),
    gamma: z.number(),
    k: z.number().int(),
  }),
  max_keywords: z.number().int(),
  model: z.record(z.string(), z.unknown()).optional(),
  vocab_size: z.number().int().optional(),
});
export type Meta = z.infer<typeof Meta>;

export const MetricReport = z.object({
  per_song: z.array(z.record(z.string(), z.unknown())),
  means: z.record(z.string(), z.number().nullable()),
  deltas: z.record(z.string(), z.number()),
});
export type MetricReport = z.infer<typeof MetricReport>;

export const ServiceError = z.object({
  code: z.string(),
  message: z.string(),
  path: z.string(),
});
export type ServiceError = z.infer<typeof ServiceError>;
