// Schema-validated HTTP client.  The transport is injectable so tests can
// drive the app against a recorded-response fake server.

import { z } from "zod";
import {
  ApiErrorSchema,
  Patient,
  PatientSchema,
  PolicyName,
  Proposal,
  ProposalSchema,
  PsaFit,
  PsaFitSchema,
  SurvivalCurve,
  SurvivalCurveSchema,
} from "./types.js";

export interface TransportResponse {
  status: number;
  body: unknown;
}

export type Transport = (
  method: string,
  path: string,
  body?: unknown,
) => Promise<TransportResponse>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
    public readonly fields: { field: string; message: string }[] = [],
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class SchemaError extends Error {}

export function fetchTransport(baseUrl: string): Transport {
  return async (method, path, body) => {
    const response = await fetch(baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    return { status: response.status, body: await response.json() };
  };
}

function decode<T>(schema: z.ZodType<T>, raw: unknown, context: string): T {
  const result = schema.safeParse(raw);
  if (!result.success) {
    throw new SchemaError(`${context}: response failed validation: ${result.error.message}`);
  }
  return result.data;
}

function raiseApiError(status: number, raw: unknown): never {
  const parsed = ApiErrorSchema.safeParse(raw);
  if (parsed.success) {
    throw new ApiError(status, parsed.data.detail, parsed.data.errors ?? []);
  }
  throw new ApiError(status, JSON.stringify(raw));
}

export interface ProposalQuery {
  policy: PolicyName;
  kappa?: number;
  hybridCenter?: "exp" | "med";
  tNextVisit?: number;
}

export class ApiClient {
  constructor(private readonly transport: Transport) {}

  private async call<T>(
    schema: z.ZodType<T>,
    method: string,
    path: string,
    body?: unknown,
    okStatus = 200,
  ): Promise<T> {
    const { status, body: raw } = await this.transport(method, path, body);
    if (status !== okStatus) {
      raiseApiError(status, raw);
    }
    return decode(schema, raw, `${method} ${path}`);
  }

  createPatient(id: string, age: number): Promise<Patient> {
    return this.call(PatientSchema, "POST", "/patients", { id, age }, 201);
  }

  getPatient(id: string): Promise<Patient> {
    return this.call(PatientSchema, "GET", `/patients/${id}`);
  }

  addPsa(id: string, time: number, psa: number): Promise<Patient> {
    return this.call(PatientSchema, "POST", `/patients/${id}/psa`, { time, psa });
  }

  addBiopsy(id: string, time: number, upgraded: boolean): Promise<Patient> {
    return this.call(PatientSchema, "POST", `/patients/${id}/biopsies`, {
      time,
      upgraded,
    });
  }

  survival(id: string, points = 81): Promise<SurvivalCurve> {
    return this.call(SurvivalCurveSchema, "GET", `/patients/${id}/survival?points=${points}`);
  }

  psaFit(id: string, points = 61): Promise<PsaFit> {
    return this.call(PsaFitSchema, "GET", `/patients/${id}/psa-fit?points=${points}`);
  }

  proposal(id: string, query: ProposalQuery): Promise<Proposal> {
    const params = new URLSearchParams({ policy: query.policy });
    if (query.kappa !== undefined) params.set("kappa", String(query.kappa));
    if (query.hybridCenter !== undefined) params.set("hybrid_center", query.hybridCenter);
    if (query.tNextVisit !== undefined) params.set("t_nv", String(query.tNextVisit));
    return this.call(ProposalSchema, "GET", `/patients/${id}/proposal?${params.toString()}`);
  }
}
