// Bootstrap: wire the controller to the page and the keyboard. Deploys as
// static files next to any reachable rating service.

import { ApiClient } from "./api.js";
import { SessionController } from "./session.js";
import { render } from "./view.js";

const params = new URLSearchParams(window.location.search);
const serviceUrl = params.get("service") ?? "http://127.0.0.1:8765";

const client = new ApiClient(serviceUrl);
const controller = new SessionController(client);
const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");

function refresh(): void {
  render(root as HTMLElement, controller, refresh);
}

document.addEventListener("keydown", async (ev) => {
  if (ev.key === "Enter" && controller.canSubmit()) {
    await controller.submit();
  } else {
    controller.handleKey(ev.key);
  }
  refresh();
});

const form = document.getElementById("session-form") as HTMLFormElement | null;
form?.addEventListener("submit", async (ev) => {
  ev.preventDefault();
  const data = new FormData(form);
  await controller.start({
    realDir: String(data.get("real_dir") ?? ""),
    syntheticDir: String(data.get("synthetic_dir") ?? ""),
    countReal: Number(data.get("count_real") ?? 50),
    countSynthetic: Number(data.get("count_synthetic") ?? 50),
    seed: Number(data.get("seed") ?? 0),
  });
  refresh();
});

refresh();
