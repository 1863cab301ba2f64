export interface ReviewKeyHandlers {
  confirm: () => void;
  reject: () => void;
  unsure: () => void;
  next?: () => void;
  previous?: () => void;
  toggleSaliency?: () => void;
}

interface KeyEventLike {
  key?: string;
  target?: unknown;
  repeat?: boolean;
  ctrlKey?: boolean;
  metaKey?: boolean;
  altKey?: boolean;
  preventDefault?: () => void;
}

function isTypingTarget(target: unknown): boolean {
  const tag = (target as { tagName?: string } | null)?.tagName;
  return tag === 'INPUT' || tag === 'TEXTAREA' || tag === 'SELECT';
}

/**
 * Keyboard-first review: y/n/u submit verdicts, j/k (or arrows) move through
 * the queue, s toggles the saliency overlay. Keys are ignored while typing in
 * form fields; auto-repeat does not re-fire verdicts.
 */
export function bindReviewKeys(target: EventTarget, handlers: ReviewKeyHandlers): () => void {
  const onKeyDown = (event: Event) => {
    const e = event as KeyEventLike;
    if (isTypingTarget(e.target) || e.ctrlKey || e.metaKey || e.altKey || e.repeat) return;
    switch (e.key?.toLowerCase()) {
      case 'y':
        e.preventDefault?.();
        handlers.confirm();
        break;
      case 'n':
        e.preventDefault?.();
        handlers.reject();
        break;
      case 'u':
        e.preventDefault?.();
        handlers.unsure();
        break;
      case 'j':
      case 'arrowdown':
        handlers.next?.();
        break;
      case 'k':
      case 'arrowup':
        handlers.previous?.();
        break;
      case 's':
        handlers.toggleSaliency?.();
        break;
    }
  };
  target.addEventListener('keydown', onKeyDown);
  return () => target.removeEventListener('keydown', onKeyDown);
}
