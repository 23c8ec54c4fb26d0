// DOM wiring: forms on the left, charts and the proposal table on the right.
// All numbers on screen come from the view models in render.ts.

import { ApiClient, ApiError, fetchTransport } from "../api/client.js";
import { FormValidationError, PatientSession, PatientView } from "../state/app.js";
import {
  CHART_HEIGHT,
  CHART_WIDTH,
  formatYears,
  proposalRows,
  psaChartModel,
  survivalChartModel,
} from "./render.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function svg(content: string): string {
  return `<svg viewBox="0 0 ${CHART_WIDTH} ${CHART_HEIGHT}" width="100%">${content}</svg>`;
}

function renderView(view: PatientView): void {
  const status = el<HTMLDivElement>("status");
  if (view.terminal) {
    status.innerHTML = `<strong class="terminal">${view.terminalMessage ?? "Remove patient from AS"}</strong>`;
  } else {
    status.textContent = `t = ${view.patient.last_biopsy_time.toFixed(2)} y (last biopsy), s = ${view.patient.last_psa_time.toFixed(2)} y (last PSA)`;
  }

  const survival = survivalChartModel(view);
  el<HTMLDivElement>("survival-chart").innerHTML = survival
    ? svg(
        `<path d="${survival.curvePath}" fill="none" stroke="#1f6feb" stroke-width="2"/>` +
          survival.riskMarkers
            .map(
              (m) =>
                `<line x1="${m.xPixel.toFixed(2)}" x2="${m.xPixel.toFixed(2)}" y1="12" y2="${CHART_HEIGHT - 32}" stroke="#d29922" stroke-dasharray="4 3"><title>${m.policy}: ${m.u.toFixed(2)} y</title></line>`,
            )
            .join(""),
      )
    : "<em>no curve (patient out of surveillance)</em>";

  const psa = psaChartModel(view);
  el<HTMLDivElement>("psa-chart").innerHTML = psa
    ? svg(
        `<path d="${psa.bandPath}" fill="#1f6feb22" stroke="none"/>` +
          `<path d="${psa.meanPath}" fill="none" stroke="#1f6feb" stroke-width="2"/>` +
          psa.observed
            .map(
              (o) =>
                `<circle cx="${o.xPixel.toFixed(2)}" cy="${o.yPixel.toFixed(2)}" r="3.5" fill="#238636"><title>${o.time.toFixed(2)} y: ${o.psa.toFixed(2)} ng/mL</title></circle>`,
            )
            .join("") +
          psa.biopsyMarkers
            .map(
              (b) =>
                `<line x1="${b.xPixel.toFixed(2)}" x2="${b.xPixel.toFixed(2)}" y1="12" y2="${CHART_HEIGHT - 32}" stroke="${b.upgraded ? "#f85149" : "#8b949e"}" stroke-width="2"/>`,
            )
            .join(""),
      )
    : "";

  const rows = proposalRows(view);
  el<HTMLTableSectionElement>("proposal-body").innerHTML = rows
    .map(
      (r) => `
      <tr>
        <td>${r.policy}</td>
        <td>${formatYears(r.u)}</td>
        <td>${formatYears(r.expected)}</td>
        <td>${formatYears(r.median)}</td>
        <td>${r.sd === null ? "-" : r.sd.toFixed(2)}</td>
        <td>${r.hybridFallback ? "risk fallback" : ""}</td>
      </tr>`,
    )
    .join("");
}

function showError(message: string): void {
  el<HTMLDivElement>("error").textContent = message;
}

export async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "http://127.0.0.1:8008";
  const client = new ApiClient(fetchTransport(base));

  const patientId = params.get("patient") ?? "p0001";
  let session = new PatientSession(client, patientId);
  try {
    renderView(await session.open());
  } catch (err) {
    if (err instanceof ApiError && err.status === 404) {
      await client.createPatient(patientId, 70);
      renderView(await session.open());
    } else {
      showError(err instanceof Error ? err.message : String(err));
      return;
    }
  }

  el<HTMLFormElement>("psa-form").addEventListener("submit", async (event) => {
    event.preventDefault();
    showError("");
    const time = Number(el<HTMLInputElement>("psa-time").value);
    const value = Number(el<HTMLInputElement>("psa-value").value);
    try {
      renderView(await session.recordPsa(time, value));
    } catch (err) {
      if (err instanceof FormValidationError || err instanceof ApiError) {
        showError(err.message);
      } else {
        throw err;
      }
    }
  });

  el<HTMLFormElement>("biopsy-form").addEventListener("submit", async (event) => {
    event.preventDefault();
    showError("");
    const time = Number(el<HTMLInputElement>("biopsy-time").value);
    const upgraded = el<HTMLInputElement>("biopsy-upgraded").checked;
    try {
      renderView(await session.recordBiopsy(time, upgraded));
    } catch (err) {
      if (err instanceof FormValidationError || err instanceof ApiError) {
        showError(err.message);
      } else {
        throw err;
      }
    }
  });
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", () => {
    void boot();
  });
}
