// Keyboard-first flow: number keys toggle visible relations, `h` takes the
// model hints, `n` files an N/A verdict, enter submits, `/` jumps to search.

export type KeyAction =
  | { kind: "toggle_nth"; position: number }
  | { kind: "take_hints" }
  | { kind: "submit_na" }
  | { kind: "submit" }
  | { kind: "focus_filter" }
  | { kind: "advance" }
  | { kind: "none" };

export function actionForKey(key: string, inFilterField: boolean): KeyAction {
  if (inFilterField) {
    // typing in the search box: only escape-style keys act globally
    if (key === "Enter") return { kind: "submit" };
    return { kind: "none" };
  }
  if (key >= "1" && key <= "9") {
    return { kind: "toggle_nth", position: Number(key) - 1 };
  }
  switch (key) {
    case "h":
      return { kind: "take_hints" };
    case "n":
      return { kind: "submit_na" };
    case "Enter":
      return { kind: "submit" };
    case "/":
      return { kind: "focus_filter" };
    case "a":
      return { kind: "advance" };
    default:
      return { kind: "none" };
  }
}
