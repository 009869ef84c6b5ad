import { ServiceClient } from "./client.js";
import { Viewer } from "./viewer.js";

/** Browser wiring: ?service=http://host:port selects the render service. */
function serviceBase(): string {
  const q = new URLSearchParams(window.location.search);
  return q.get("service") ?? "http://127.0.0.1:8080";
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function main(): void {
  const frame = el<HTMLImageElement>("frame");
  const scrubber = el<HTMLInputElement>("scrubber");
  const timeLabel = el<HTMLSpanElement>("time-label");
  const banner = el<HTMLDivElement>("banner");
  const playButton = el<HTMLButtonElement>("play");
  const bookmarkButton = el<HTMLButtonElement>("bookmark");
  const bookmarkList = el<HTMLSelectElement>("bookmark-list");
  const badge = el<HTMLSpanElement>("badge");

  const client = new ServiceClient(serviceBase());
  const viewer = new Viewer(client, {
    onFullFrame: (req) => {
      frame.src = client.frameUrl(req);
      badge.textContent = "";
    },
    onPreviewFrame: (_req, blob) => {
      const url = URL.createObjectURL(blob as Blob);
      const previous = frame.dataset.previewUrl;
      frame.src = url;
      frame.dataset.previewUrl = url;
      if (previous) URL.revokeObjectURL(previous);
    },
    onError: (message) => {
      badge.textContent = message;
    },
    onStateChange: (state) => {
      scrubber.value = String(state.timeIndex);
      timeLabel.textContent = `t = ${state.timeIndex}`;
      playButton.textContent = state.playing ? "pause" : "play";
    },
  }, undefined, window.localStorage);

  const refreshBookmarks = () => {
    bookmarkList.innerHTML = "";
    for (const mark of viewer.listBookmarks()) {
      const option = document.createElement("option");
      option.value = mark.name;
      option.textContent = `${mark.name} (t=${mark.timeIndex})`;
      bookmarkList.appendChild(option);
    }
  };

  viewer.connect().then(() => {
    banner.style.display = "none";
    scrubber.min = String(viewer.timeline[0] ?? 0);
    scrubber.max = String(viewer.timeline[viewer.timeline.length - 1] ?? 0);
    scrubber.disabled = viewer.timeline.length === 0;
    playButton.disabled = viewer.timeline.length === 0;
    if (viewer.timeline.length === 0) {
      badge.textContent = "archive is empty";
    }
    refreshBookmarks();
  }).catch(() => {
    banner.style.display = "block";
    banner.textContent = `cannot reach ${serviceBase()} — retry?`;
    banner.onclick = () => window.location.reload();
  });

  // orbit dragging
  let dragStart: { x: number; y: number } | null = null;
  frame.addEventListener("pointerdown", (ev) => {
    dragStart = { x: ev.clientX, y: ev.clientY };
    viewer.beginDrag();
    frame.setPointerCapture(ev.pointerId);
  });
  frame.addEventListener("pointermove", (ev) => {
    if (!dragStart) return;
    const dx = ev.clientX - dragStart.x;
    const dy = ev.clientY - dragStart.y;
    dragStart = { x: ev.clientX, y: ev.clientY };
    viewer.dragBy(-dx * 0.01, dy * 0.01);
  });
  frame.addEventListener("pointerup", () => {
    dragStart = null;
    viewer.endDrag();
  });
  frame.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    viewer.zoomBy(ev.deltaY > 0 ? 1.1 : 1 / 1.1);
  });

  scrubber.addEventListener("input", () => viewer.scrub(Number(scrubber.value)));

  playButton.addEventListener("click", () => {
    if (viewer.state.playing) {
      viewer.stop();
    } else {
      viewer.play();
    }
  });
  let lastTick = 0;
  const loop = (now: number) => {
    if (viewer.state.playing && now - lastTick >= 1000 / viewer.state.playbackFps) {
      lastTick = now;
      viewer.tick();
    }
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);

  bookmarkButton.addEventListener("click", () => {
    const name = window.prompt("bookmark name", `view ${viewer.state.timeIndex}`);
    if (name) {
      viewer.bookmark(name);
      refreshBookmarks();
    }
  });
  bookmarkList.addEventListener("change", () => {
    if (bookmarkList.value) viewer.recall(bookmarkList.value);
  });
}

main();
