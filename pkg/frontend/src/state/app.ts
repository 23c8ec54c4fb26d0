// Application state for one patient session: the visit loop as the clinician
// drives it.  All statistics come from the API; this layer only orchestrates
// calls, guards form input, and exposes an immutable view for rendering.

import { ApiClient, ApiError } from "../api/client.js";
import {
  Patient,
  PolicyName,
  Proposal,
  PsaFit,
  SurvivalCurve,
} from "../api/types.js";

export class FormValidationError extends Error {}

export interface PolicyChoice {
  policy: PolicyName;
  kappa?: number;
  hybridCenter?: "exp" | "med";
}

export interface PatientView {
  patient: Patient;
  survival: SurvivalCurve | null;
  psaFit: PsaFit | null;
  proposals: Record<string, Proposal>;
  terminal: boolean; // reclassified: surveillance ends
  terminalMessage: string | null;
  lastRefresh: "idle" | "loading" | "ready" | "error";
  lastError: string | null;
}

export const DEFAULT_POLICIES: PolicyChoice[] = [
  { policy: "hybrid", kappa: 0.95, hybridCenter: "med" },
  { policy: "dyn_risk", kappa: 0.95 },
  { policy: "exp" },
  { policy: "med" },
  { policy: "annual" },
  { policy: "prias" },
];

function policyKey(choice: PolicyChoice): string {
  return choice.kappa !== undefined
    ? `${choice.policy}@${choice.kappa}`
    : choice.policy;
}

export class PatientSession {
  view: PatientView | null = null;
  private inFlight = false;

  constructor(
    private readonly client: ApiClient,
    private readonly patientId: string,
    private readonly policies: PolicyChoice[] = DEFAULT_POLICIES,
  ) {}

  get busy(): boolean {
    return this.inFlight;
  }

  async open(): Promise<PatientView> {
    const patient = await this.client.getPatient(this.patientId);
    return this.refreshFrom(patient);
  }

  private emptyView(patient: Patient): PatientView {
    return {
      patient,
      survival: null,
      psaFit: null,
      proposals: {},
      terminal: patient.upgraded,
      terminalMessage: patient.upgraded ? "Remove patient from AS" : null,
      lastRefresh: "loading",
      lastError: null,
    };
  }

  private async refreshFrom(patient: Patient): Promise<PatientView> {
    const view = this.emptyView(patient);
    this.view = view;
    if (view.terminal) {
      view.lastRefresh = "ready";
      return view;
    }
    try {
      view.survival = await this.client.survival(this.patientId);
      view.psaFit = await this.client.psaFit(this.patientId);
      for (const choice of this.policies) {
        view.proposals[policyKey(choice)] = await this.client.proposal(this.patientId, {
          policy: choice.policy,
          kappa: choice.kappa,
          hybridCenter: choice.hybridCenter,
        });
      }
      view.lastRefresh = "ready";
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        // server declared the patient out of surveillance
        view.terminal = true;
        view.terminalMessage = err.detail;
        view.lastRefresh = "ready";
      } else {
        view.lastRefresh = "error";
        view.lastError = err instanceof Error ? err.message : String(err);
        throw err;
      }
    }
    return view;
  }

  /** Validate locally, then record a PSA measurement and refresh. */
  async recordPsa(time: number, psa: number): Promise<PatientView> {
    const patient = this.requireView().patient;
    if (!(psa > 0)) {
      throw new FormValidationError("PSA must be positive (ng/mL)");
    }
    if (time <= patient.last_psa_time && patient.psa.length > 0) {
      throw new FormValidationError(
        `time must be after the latest PSA at ${patient.last_psa_time} years`,
      );
    }
    return this.mutate(() => this.client.addPsa(this.patientId, time, psa));
  }

  /** Validate locally, then record a biopsy result and refresh. */
  async recordBiopsy(time: number, upgraded: boolean): Promise<PatientView> {
    const patient = this.requireView().patient;
    if (!(time > 0)) {
      throw new FormValidationError("biopsy time must be positive");
    }
    if (patient.biopsies.length > 0) {
      const last = patient.biopsies[patient.biopsies.length - 1]!;
      if (time <= last.time) {
        throw new FormValidationError(
          `biopsy time must be after the previous biopsy at ${last.time} years`,
        );
      }
    }
    return this.mutate(() => this.client.addBiopsy(this.patientId, time, upgraded));
  }

  private requireView(): PatientView {
    if (this.view === null) {
      throw new Error("session not opened");
    }
    return this.view;
  }

  private async mutate(call: () => Promise<Patient>): Promise<PatientView> {
    if (this.inFlight) {
      throw new FormValidationError("another update is still in flight");
    }
    this.inFlight = true;
    try {
      const patient = await call();
      return await this.refreshFrom(patient);
    } finally {
      this.inFlight = false;
    }
  }
}
