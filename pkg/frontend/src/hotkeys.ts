/**
 * Keyboard shortcuts: 1/2/3 select the visible label buttons in order,
 * ArrowLeft (or b) goes back. Keystrokes inside form fields are ignored.
 */

export interface HotkeyActions {
  onLabel: (index: number) => void;
  onBack: () => void;
}

export function bindHotkeys(target: Window, actions: HotkeyActions): () => void {
  const handler = (event: KeyboardEvent) => {
    if (
      event.target instanceof HTMLInputElement ||
      event.target instanceof HTMLTextAreaElement
    ) {
      return;
    }
    switch (event.key) {
      case '1':
      case '2':
      case '3':
        event.preventDefault();
        actions.onLabel(Number(event.key) - 1);
        break;
      case 'ArrowLeft':
      case 'b':
      case 'B':
        event.preventDefault();
        actions.onBack();
        break;
    }
  };
  target.addEventListener('keydown', handler);
  return () => target.removeEventListener('keydown', handler);
}
