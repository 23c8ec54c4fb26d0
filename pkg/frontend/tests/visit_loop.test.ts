// End-to-end visit loop against the recorded fixture server: enter PSA
// values, read proposals, record a negative biopsy (proposals move later),
// then an upgraded biopsy (terminal surveillance-exit state).  Every number
// the UI would render is checked against its fixture field.

import { describe, expect, it } from "vitest";
import { ApiClient, ApiError } from "../src/api/client.js";
import { PatientSession, FormValidationError } from "../src/state/app.js";
import { proposalRows, psaChartModel, survivalChartModel } from "../src/ui/render.js";
import { FixtureServer, loadFixtures } from "./fixture_server.js";
import type { Proposal, SurvivalCurve, Patient } from "../src/api/types.js";

function freshSession() {
  const server = new FixtureServer(loadFixtures("visit_loop.json"));
  const client = new ApiClient(server.transport);
  return { server, client, session: new PatientSession(client, "demo") };
}

describe("visit loop", () => {
  it("walks the full scenario and matches every fixture field", async () => {
    const { server, client, session } = freshSession();

    // create (the recorder starts with the POST) then open
    await client.createPatient("demo", 70);
    let view = await session.open();
    expect(view.lastRefresh).toBe("ready");
    expect(view.patient.id).toBe("demo");
    expect(Object.keys(view.proposals)).toHaveLength(6);

    // local validation guards fire before any request
    const consumedBefore = server.consumed;
    await expect(session.recordPsa(1.0, -3)).rejects.toBeInstanceOf(FormValidationError);
    expect(server.consumed).toBe(consumedBefore);

    view = await session.recordPsa(0.0, 5.6);
    expect(view.patient.psa).toEqual([{ time: 0.0, psa: 5.6 }]);

    // a PSA draw not after the latest one is rejected locally, no request
    await expect(session.recordPsa(0.0, 6.0)).rejects.toBeInstanceOf(FormValidationError);
    expect(server.consumed).toBe(consumedBefore + 9);

    view = await session.recordPsa(0.5, 5.9);
    const before = view.proposals["dyn_risk@0.95"]!;
    expect(before.policy).toBe("dyn_risk(kappa=0.95)");

    // negative biopsy: the risk-threshold proposal is postponed
    view = await session.recordBiopsy(1.0, false);
    const after = view.proposals["dyn_risk@0.95"]!;
    expect(view.patient.biopsies).toEqual([{ time: 1.0, upgraded: false }]);
    expect(after.t).toBe(1.0);
    expect(after.u).toBeGreaterThan(before.u);

    // upgraded biopsy: terminal state, no further model calls
    view = await session.recordBiopsy(2.2, true);
    expect(view.terminal).toBe(true);
    expect(view.terminalMessage).toBe("Remove patient from AS");
    expect(view.survival).toBeNull();

    // the server refuses proposals for a reclassified patient
    await expect(
      client.proposal("demo", { policy: "dyn_risk", kappa: 0.95 }),
    ).rejects.toMatchObject({ status: 422, detail: "Remove patient from AS" });
    expect(server.remaining).toBe(0);
  });

  it("renders exactly the API numbers (no client-side smoothing)", async () => {
    const { server, client, session } = freshSession();
    await client.createPatient("demo", 70);
    await session.open();
    await session.recordPsa(0.0, 5.6);
    const view = await session.recordPsa(0.5, 5.9);

    // fixture entries for this refresh: POST psa, survival, psa-fit, 6 proposals
    const base = server.consumed - 9;
    const patientFixture = server.entry(base).response as Patient;
    const survivalFixture = server.entry(base + 1).response as SurvivalCurve;

    expect(view.patient).toEqual(patientFixture);
    expect(view.survival).toEqual(survivalFixture);

    const rows = proposalRows(view);
    for (let k = 0; k < 6; k++) {
      const fixture = server.entry(base + 3 + k).response as Proposal;
      const row = rows.find((r) => r.policy === fixture.policy)!;
      expect(row.u).toBe(fixture.u);
      expect(row.expected).toBe(fixture.diagnostics.expected);
      expect(row.median).toBe(fixture.diagnostics.median);
      expect(row.sd).toBe(fixture.diagnostics.sd);
      expect(row.q025).toBe(fixture.diagnostics.q025);
    }

    const psaModel = psaChartModel(view)!;
    expect(psaModel.observed.map((o) => ({ time: o.time, psa: o.psa }))).toEqual(
      patientFixture.psa,
    );
  });

  it("keeps chart geometry consistent with the payload", async () => {
    const { client, session } = freshSession();
    await client.createPatient("demo", 70);
    await session.open();
    await session.recordPsa(0.0, 5.6);
    await session.recordPsa(0.5, 5.9);
    const view = await session.recordBiopsy(1.0, false);

    const survival = survivalChartModel(view)!;
    // the curve is rendered monotone exactly as received
    const probs = view.survival!.points.map((p) => p.prob);
    for (let i = 1; i < probs.length; i++) {
      expect(probs[i]!).toBeLessThanOrEqual(probs[i - 1]! + 1e-12);
    }
    expect(survival.points[0]!.y).toBe(1.0);

    // the kappa = 0.95 proposal marker sits at the pi = 0.95 crossing, up to
    // one curve grid step
    const marker = survival.riskMarkers.find((m) => m.policy === "dyn_risk@0.95")!;
    expect(survival.kappaCrossingX).not.toBeNull();
    const grid = view.survival!.points;
    const stepPx =
      survival.xScale(grid[1]!.u) - survival.xScale(grid[0]!.u);
    expect(Math.abs(survival.kappaCrossingX! - marker.xPixel)).toBeLessThanOrEqual(
      Math.abs(stepPx) + 1e-9,
    );

    // the PSA band encloses its mean line at every rendered point
    const fit = view.psaFit!;
    for (const p of fit.points) {
      expect(p.low).toBeLessThanOrEqual(p.mean + 1e-12);
      expect(p.mean).toBeLessThanOrEqual(p.high + 1e-12);
    }
  });

  it("renders the prior predictive for an empty patient without crashing", async () => {
    const { client, session } = freshSession();
    await client.createPatient("demo", 70);
    const view = await session.open();
    const survival = survivalChartModel(view);
    const psa = psaChartModel(view);
    expect(survival).not.toBeNull();
    expect(psa).not.toBeNull();
    expect(survival!.curvePath.startsWith("M")).toBe(true);
    expect(psa!.observed).toHaveLength(0);
  });
});
