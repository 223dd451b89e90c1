// DOM wiring: mount the controller, delegate events, re-render on change.
// All logic lives in state.ts/render.ts; this file only touches the DOM.

import { ApiClient } from "./api.js";
import { actionForKey } from "./keyboard.js";
import { renderApp, type ViewState } from "./render.js";
import { SessionController } from "./state.js";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app mount point");
}

const controller = new SessionController(new ApiClient(), "console", (view: ViewState) => {
  root.innerHTML = renderApp(view);
  wire(view);
});

function wire(view: ViewState): void {
  root!.querySelectorAll<HTMLElement>("li.relation").forEach((node) => {
    node.addEventListener("click", () => controller.toggle(node.dataset.rel!));
  });
  root!.querySelector<HTMLElement>('[data-action="submit"]')?.addEventListener("click", () => {
    void controller.submit();
  });
  root!.querySelector<HTMLElement>('[data-action="na"]')?.addEventListener("click", () => {
    void controller.submitNA();
  });
  root!.querySelector<HTMLElement>('[data-action="hints"]')?.addEventListener("click", () => {
    controller.takeHints();
  });
  root!.querySelector<HTMLElement>('[data-action="advance"]')?.addEventListener("click", () => {
    void controller.advance();
  });
  const filter = root!.querySelector<HTMLInputElement>("input.filter");
  filter?.addEventListener("input", () => controller.setFilter(filter.value));
  if (view.filter && filter) {
    filter.focus();
    filter.setSelectionRange(filter.value.length, filter.value.length);
  }
}

document.addEventListener("keydown", (event) => {
  const inFilter = document.activeElement?.classList.contains("filter") ?? false;
  const action = actionForKey(event.key, inFilter);
  if (action.kind === "none") return;
  event.preventDefault();
  switch (action.kind) {
    case "toggle_nth":
      controller.toggleNth(action.position);
      break;
    case "take_hints":
      controller.takeHints();
      break;
    case "submit_na":
      void controller.submitNA();
      break;
    case "submit":
      void controller.submit();
      break;
    case "advance":
      void controller.advance();
      break;
    case "focus_filter":
      document.querySelector<HTMLInputElement>("input.filter")?.focus();
      break;
  }
});

void controller.start();
