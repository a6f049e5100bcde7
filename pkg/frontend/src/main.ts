// Page wiring: cached-view browser, three-click placement with live box
// overlay, job submission, and the polling dashboard.  All geometry comes
// from the service; this file only moves pixels between DOM nodes.

import { ApiClient } from "./api.js";
import { drawBoxOverlay, overlaySegments } from "./boxOverlay.js";
import { ClickCapture } from "./clickCapture.js";
import { DashboardView, drawSparkline, JobDashboard, LossPoint } from "./dashboard.js";
import { PlacementSession } from "./session.js";
import { JobSnapshot, PlaceResponse, ViewInfo } from "./types.js";

const $ = (id: string) => document.getElementById(id)!;

let api: ApiClient;
let session: PlacementSession;
let capture: ClickCapture | null = null;
let dashboard: JobDashboard;
let views: ViewInfo[] = [];

function currentView(): ViewInfo {
  return views.find((v) => v.view_id === session.viewId) ?? views[0];
}

function overlayCanvas(): HTMLCanvasElement {
  return $("overlay") as HTMLCanvasElement;
}

function redrawOverlay(resp: PlaceResponse | null): void {
  const canvas = overlayCanvas();
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const view = currentView();
  const sx = canvas.width / view.width;
  const sy = canvas.height / view.height;

  ctx.fillStyle = "#ff5252";
  for (const [u, v] of session.clicks) {
    ctx.beginPath();
    ctx.arc(u * sx, v * sy, 4, 0, 2 * Math.PI);
    ctx.fill();
  }
  if (resp === null) return;
  const corners = resp.projections[String(view.view_id)];
  if (corners === undefined) return;
  ctx.strokeStyle = "#4caf50";
  ctx.lineWidth = 2;
  drawBoxOverlay(ctx, overlaySegments(corners, sx, sy));
  ($("box-text") as HTMLTextAreaElement).value = resp.box;
}

function bindClickCapture(): void {
  const view = currentView();
  capture = new ClickCapture(
    overlayCanvas(),
    [view.width, view.height],
    (clicks) => {
      void session.clicksComplete(clicks).catch(showError);
    },
    () => flash($("stage"), "outside"),
  );
}

function flash(el: HTMLElement, cls: string): void {
  el.classList.add(cls);
  setTimeout(() => el.classList.remove(cls), 300);
}

function showError(err: unknown): void {
  const banner = $("error-banner");
  banner.textContent = String(err);
  banner.hidden = false;
  setTimeout(() => (banner.hidden = true), 4000);
}

async function selectView(viewId: number): Promise<void> {
  session.selectView(viewId);
  const view = currentView();
  const img = $("stage-img") as HTMLImageElement;
  img.src = api.colorUrl(view.view_id);
  for (const el of document.querySelectorAll("#thumbs img")) {
    el.classList.toggle("selected",
      Number((el as HTMLElement).dataset.viewId) === viewId);
  }
  bindClickCapture();
  redrawOverlay(session.boxPreview);
}

async function loadViews(): Promise<void> {
  const data = await api.getViews();
  views = data.views;
  const thumbs = $("thumbs");
  thumbs.innerHTML = "";
  for (const view of views) {
    const img = document.createElement("img");
    img.src = api.thumbUrl(view.view_id, 96);
    img.dataset.viewId = String(view.view_id);
    img.title = `view ${view.view_id}`;
    img.addEventListener("click", () => void selectView(view.view_id));
    thumbs.appendChild(img);
  }
  await selectView(views[0].view_id);
}

function ratioValues(): [number, number, number] {
  return [
    Number(($("ratio-x") as HTMLInputElement).value),
    Number(($("ratio-y") as HTMLInputElement).value),
    Number(($("ratio-z") as HTMLInputElement).value),
  ];
}

function pageDashboardView(): DashboardView {
  return {
    setStatus(snap: JobSnapshot): void {
      $("job-state").textContent = snap.state;
      $("job-step").textContent = `${snap.step} / ${snap.total_steps}`;
      if (snap.error) $("job-error").textContent = snap.error;
      ($("cancel") as HTMLButtonElement).disabled =
        snap.state !== "pending" && snap.state !== "running";
    },
    setLossCurve(points: LossPoint[]): void {
      const canvas = $("sparkline") as HTMLCanvasElement;
      const ctx = canvas.getContext("2d")!;
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      ctx.strokeStyle = "#2196f3";
      ctx.lineWidth = 1;
      drawSparkline(ctx, points, canvas.width, canvas.height);
      if (points.length > 0) {
        $("loss-value").textContent =
          points[points.length - 1].total.toExponential(3);
      }
    },
    setPreview(url: string): void {
      ($("after-img") as HTMLImageElement).src = `${url}&t=${Date.now()}`;
      $("compare").hidden = false;
    },
    showStaleBanner(message: string): void {
      const banner = $("stale-banner");
      banner.textContent = message;
      banner.hidden = false;
    },
  };
}

function wireCompareSlider(): void {
  const range = $("compare-pos") as HTMLInputElement;
  range.addEventListener("input", () => {
    const pct = Number(range.value);
    ($("after-img") as HTMLImageElement).style.clipPath =
      `inset(0 ${100 - pct}% 0 0)`;
  });
}

window.addEventListener("load", () => {
  api = new ApiClient(($("api-url") as HTMLInputElement).value);
  session = new PlacementSession(api, redrawOverlay);
  dashboard = new JobDashboard(api, pageDashboardView());

  $("connect").addEventListener("click", () => {
    api = new ApiClient(($("api-url") as HTMLInputElement).value);
    session = new PlacementSession(api, redrawOverlay);
    dashboard = new JobDashboard(api, pageDashboardView());
    loadViews().catch(showError);
  });

  overlayCanvas().addEventListener("click", (ev) => capture?.handle(ev));

  $("reset-box").addEventListener("click", () => {
    capture?.reset();
    session.clearBox();
    redrawOverlay(null);
  });

  for (const id of ["ratio-x", "ratio-y", "ratio-z"]) {
    $(id).addEventListener("change", () => {
      $(`${id}-label`).textContent = ($(id) as HTMLInputElement).value;
      void session.setRatios(ratioValues()).catch(showError);
    });
  }

  $("submit").addEventListener("click", () => {
    session.prompt = ($("prompt") as HTMLInputElement).value;
    session
      .submit()
      .then((snap) => {
        $("stale-banner").hidden = true;
        ($("before-img") as HTMLImageElement).src =
          api.colorUrl(session.viewId);
        dashboard.previewView(session.viewId);
        dashboard.attach(snap.job_id);
        dashboard.start();
      })
      .catch(showError);
  });

  $("cancel").addEventListener("click", () => {
    void dashboard.cancel().catch(showError);
  });

  $("export").addEventListener("click", () => {
    session.prompt = ($("prompt") as HTMLInputElement).value;
    ($("export-out") as HTMLTextAreaElement).value = session.exportSnapshot();
  });

  wireCompareSlider();
  loadViews().catch(showError);
});
