// View-model construction for the three panels.  Pure: PatientView in,
// renderable descriptions out.  The DOM layer (main.ts) only injects these
// into templates, so tests can assert every displayed number against the
// API payload without a browser.

import { crossingX, linePath, bandPath, linearScale, markerX, Scale, XY } from "../charts/paths.js";
import { PatientView } from "../state/app.js";

export const CHART_WIDTH = 640;
export const CHART_HEIGHT = 260;
export const MARGIN = { left: 48, right: 16, top: 12, bottom: 32 };

export interface SurvivalChartModel {
  curvePath: string;
  riskMarkers: { policy: string; xPixel: number; u: number }[];
  kappaCrossingX: number | null; // where the curve passes 0.95
  xScale: Scale;
  yScale: Scale;
  points: XY[];
}

export interface PsaChartModel {
  bandPath: string;
  meanPath: string;
  observed: { xPixel: number; yPixel: number; time: number; psa: number }[];
  biopsyMarkers: { xPixel: number; time: number; upgraded: boolean }[];
  xScale: Scale;
  yScale: Scale;
}

export interface ProposalRow {
  key: string;
  policy: string;
  u: number;
  expected: number | null;
  median: number | null;
  sd: number | null;
  q025: number | null;
  kappaUsed: number | null;
  hybridFallback: boolean;
}

function plotArea(): { x: [number, number]; y: [number, number] } {
  return {
    x: [MARGIN.left, CHART_WIDTH - MARGIN.right],
    y: [CHART_HEIGHT - MARGIN.bottom, MARGIN.top],
  };
}

export function survivalChartModel(view: PatientView): SurvivalChartModel | null {
  const curve = view.survival;
  if (!curve || curve.points.length === 0) return null;
  const area = plotArea();
  const us = curve.points.map((p) => p.u);
  const xScale = linearScale([Math.min(...us), Math.max(...us)], area.x);
  const yScale = linearScale([0, 1], area.y);
  const points: XY[] = curve.points.map((p) => ({ x: p.u, y: p.prob }));
  const riskMarkers = Object.entries(view.proposals).map(([key, prop]) => ({
    policy: key,
    xPixel: markerX(prop.u, xScale),
    u: prop.u,
  }));
  return {
    curvePath: linePath(points, xScale, yScale),
    riskMarkers,
    kappaCrossingX: crossingX(points, 0.95, xScale),
    xScale,
    yScale,
    points,
  };
}

export function psaChartModel(view: PatientView): PsaChartModel | null {
  const fit = view.psaFit;
  if (!fit || fit.points.length === 0) return null;
  const area = plotArea();
  const times = fit.points.map((p) => p.time);
  const values = [
    ...fit.points.map((p) => p.low),
    ...fit.points.map((p) => p.high),
    ...fit.observed.map((o) => Math.log2(o.psa)),
  ];
  const xScale = linearScale([Math.min(...times), Math.max(...times)], area.x);
  const yScale = linearScale([Math.min(...values), Math.max(...values)], area.y);
  return {
    bandPath: bandPath(
      times,
      fit.points.map((p) => p.low),
      fit.points.map((p) => p.high),
      xScale,
      yScale,
    ),
    meanPath: linePath(
      fit.points.map((p) => ({ x: p.time, y: p.mean })),
      xScale,
      yScale,
    ),
    observed: fit.observed.map((o) => ({
      xPixel: xScale(o.time),
      yPixel: yScale(Math.log2(o.psa)),
      time: o.time,
      psa: o.psa,
    })),
    biopsyMarkers: view.patient.biopsies.map((b) => ({
      xPixel: xScale(b.time),
      time: b.time,
      upgraded: b.upgraded,
    })),
    xScale,
    yScale,
  };
}

export function proposalRows(view: PatientView): ProposalRow[] {
  return Object.entries(view.proposals).map(([key, p]) => ({
    key,
    policy: p.policy,
    u: p.u,
    expected: p.diagnostics.expected,
    median: p.diagnostics.median,
    sd: p.diagnostics.sd,
    q025: p.diagnostics.q025,
    kappaUsed: p.diagnostics.kappa_used,
    hybridFallback: p.diagnostics.hybrid_fallback,
  }));
}

export function formatYears(value: number | null): string {
  return value === null ? "-" : `${value.toFixed(2)} y`;
}
