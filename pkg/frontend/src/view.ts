// DOM layer: draws the blinded trial (grayscale canvas with zoom/rotate),
// the answer buttons, and the final confusion report. Kept as thin as
// possible; all decisions live in SessionController.

import { SessionController } from "./session.js";
import { TrialImage } from "./api.js";

function decodePixels(image: TrialImage): Uint8ClampedArray<ArrayBuffer> {
  const raw = atob(image.pixels);
  const rgba = new Uint8ClampedArray(new ArrayBuffer(image.width * image.height * 4));
  for (let i = 0; i < raw.length; i++) {
    const v = raw.charCodeAt(i);
    rgba[4 * i] = v;
    rgba[4 * i + 1] = v;
    rgba[4 * i + 2] = v;
    rgba[4 * i + 3] = 255;
  }
  return rgba;
}

export function drawTrialImage(canvas: HTMLCanvasElement, image: TrialImage,
                               zoom: number, rotation: number): void {
  canvas.width = image.width;
  canvas.height = image.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unavailable");
  ctx.putImageData(new ImageData(decodePixels(image), image.width, image.height), 0, 0);
  canvas.style.imageRendering = "pixelated";
  canvas.style.transform = `scale(${zoom}) rotate(${rotation}deg)`;
}

export function render(root: HTMLElement, controller: SessionController,
                       onChange: () => void): void {
  root.replaceChildren();
  if (controller.phase === "error") {
    const banner = document.createElement("div");
    banner.className = "banner error";
    banner.textContent = `Cannot display trial: ${controller.errorMessage}`;
    root.appendChild(banner);
    return; // no submission possible on a malformed payload
  }
  if (controller.phase === "done" && controller.report) {
    root.appendChild(renderReport(controller));
    return;
  }
  if (controller.phase !== "trial" || !controller.trial) {
    const idle = document.createElement("p");
    idle.textContent = "No active session.";
    root.appendChild(idle);
    return;
  }

  const { payload, zoom, rotation, answers } = controller.trial;
  const status = document.createElement("p");
  status.textContent =
    `item ${controller.answeredCount + 1} / ${controller.itemCount}  ` +
    `(zoom ${zoom}x, rotation ${rotation}°)`;
  root.appendChild(status);

  const frame = document.createElement("div");
  frame.className = "image-frame";
  const canvas = document.createElement("canvas");
  drawTrialImage(canvas, payload.image, zoom, rotation);
  frame.appendChild(canvas);
  root.appendChild(frame);

  const controls = document.createElement("div");
  controls.className = "controls";
  for (const [label, action] of [
    ["zoom +", () => controller.zoomIn()],
    ["zoom -", () => controller.zoomOut()],
    ["rotate 90°", () => controller.rotate()],
  ] as const) {
    const b = document.createElement("button");
    b.textContent = label;
    b.onclick = () => { action(); onChange(); };
    controls.appendChild(b);
  }
  root.appendChild(controls);

  for (const q of payload.questions) {
    const row = document.createElement("div");
    row.className = "question";
    const prompt = document.createElement("span");
    prompt.textContent = q.prompt + " ";
    row.appendChild(prompt);
    for (const option of q.options) {
      const b = document.createElement("button");
      b.textContent = option;
      b.className = answers[q.id] === option ? "option selected" : "option";
      b.onclick = () => { controller.choose(q.id, option); onChange(); };
      row.appendChild(b);
    }
    root.appendChild(row);
  }

  const submit = document.createElement("button");
  submit.textContent = "submit";
  submit.className = "submit";
  submit.disabled = !controller.canSubmit();
  submit.onclick = async () => {
    submit.disabled = true; // double clicks are also rejected server-side
    await controller.submit();
    onChange();
  };
  root.appendChild(submit);
}

function renderReport(controller: SessionController): HTMLElement {
  const report = controller.report!;
  const box = document.createElement("div");
  box.className = "report";
  const head = document.createElement("h2");
  head.textContent = `Session complete (${report.answered}/${report.total})`;
  box.appendChild(head);
  for (const [name, q] of Object.entries(report.questions)) {
    const section = document.createElement("section");
    const title = document.createElement("h3");
    title.textContent = `${name}: accuracy ${q.accuracy.toFixed(1)}%`;
    section.appendChild(title);
    const table = document.createElement("table");
    for (const [cell, value] of Object.entries(q.cells)) {
      const tr = document.createElement("tr");
      const td1 = document.createElement("td");
      td1.textContent = cell.replaceAll("_", " ");
      const td2 = document.createElement("td");
      td2.textContent = `${value.toFixed(1)}%`;
      tr.append(td1, td2);
      table.appendChild(tr);
    }
    section.appendChild(table);
    box.appendChild(section);
  }
  return box;
}
