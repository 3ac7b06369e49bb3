/**
 * Survey client for the pcsrank comparison service.
 *
 * Shows the issued pair side-by-side (images when the catalog has media,
 * attribute cards otherwise), captures left / no-difference / right choices
 * by mouse or keyboard, and keeps exactly one submission in flight. Retries
 * reuse the same response id, so the server's idempotent log never records
 * a judgment twice.
 */

export type ItemPayload = {
  readonly id: string;
  readonly media_uri: string | null;
  readonly attributes: Record<string, number | string>;
};

export type PairPayload = {
  readonly pair_id: string;
  readonly left: ItemPayload;
  readonly right: ItemPayload;
};

export type Choice = 'left' | 'tie' | 'right';

export const KEY_BINDINGS: Readonly<Record<string, Choice>> = {
  ArrowLeft: 'left',
  ArrowDown: 'tie',
  ' ': 'tie',
  ArrowRight: 'right',
};

export type AppOptions = {
  /** Service origin; empty string means same-origin (the served bundle). */
  baseUrl?: string;
  doc?: Document;
};

const RESPONDENT_KEY = 'pcsrank-respondent-id';
const RETRY_DELAY_MS = 300;
const MAX_ATTEMPTS = 5;

function uuid(): string {
  const c = globalThis.crypto;
  if (c && 'randomUUID' in c) return c.randomUUID();
  let out = '';
  for (let i = 0; i < 32; i++) out += Math.floor(Math.random() * 16).toString(16);
  return out;
}

function loadRespondentId(): string {
  try {
    const stored = window.localStorage.getItem(RESPONDENT_KEY);
    if (stored) return stored;
    const fresh = uuid();
    window.localStorage.setItem(RESPONDENT_KEY, fresh);
    return fresh;
  } catch {
    return uuid();
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class SurveyApp {
  readonly respondentId: string;
  private readonly baseUrl: string;
  private readonly doc: Document;
  private readonly elems: {
    leftPane: HTMLElement;
    rightPane: HTMLElement;
    buttons: Record<Choice, HTMLButtonElement>;
    progress: HTMLElement;
    banner: HTMLElement;
    bannerMessage: HTMLElement;
    retry: HTMLButtonElement;
  };

  private currentPair: PairPayload | null = null;
  private inFlight = false;
  private submitted = 0;

  constructor(options: AppOptions = {}) {
    this.baseUrl = options.baseUrl ?? '';
    this.doc = options.doc ?? document;
    const byId = (id: string) => {
      const el = this.doc.getElementById(id);
      if (!el) throw new Error(`missing element #${id}`);
      return el;
    };
    this.elems = {
      leftPane: byId('left-pane'),
      rightPane: byId('right-pane'),
      buttons: {
        left: byId('choose-left') as HTMLButtonElement,
        tie: byId('choose-tie') as HTMLButtonElement,
        right: byId('choose-right') as HTMLButtonElement,
      },
      progress: byId('progress'),
      banner: byId('banner'),
      bannerMessage: byId('banner-message'),
      retry: byId('retry') as HTMLButtonElement,
    };
    this.respondentId = loadRespondentId();

    for (const choice of ['left', 'tie', 'right'] as const) {
      this.elems.buttons[choice].addEventListener('click', () => {
        void this.submit(choice);
      });
    }
    this.elems.retry.addEventListener('click', () => {
      void this.loadPair();
    });
    this.doc.addEventListener('keydown', (event) => {
      const choice = KEY_BINDINGS[event.key];
      if (!choice) return;
      event.preventDefault();
      void this.submit(choice);
    });

    void this.loadPair();
  }

  get progressCount(): number {
    return this.submitted;
  }

  get pair(): PairPayload | null {
    return this.currentPair;
  }

  /** Resolves once no request is in flight and a pair or the error banner is up. */
  async idle(timeoutMs = 5000): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const settled =
        !this.inFlight &&
        (this.currentPair !== null || !this.elems.banner.hidden);
      if (settled) return;
      if (Date.now() > deadline) throw new Error('idle() timed out');
      await sleep(10);
    }
  }

  private setButtonsEnabled(enabled: boolean): void {
    for (const button of Object.values(this.elems.buttons)) {
      button.disabled = !enabled;
    }
  }

  private showBanner(message: string): void {
    this.elems.bannerMessage.textContent = message;
    this.elems.banner.hidden = false;
  }

  private hideBanner(): void {
    this.elems.banner.hidden = true;
  }

  async loadPair(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    this.currentPair = null;
    this.setButtonsEnabled(false);
    try {
      const url = `${this.baseUrl}/api/pair?respondent=${encodeURIComponent(this.respondentId)}`;
      const reply = await fetch(url);
      if (!reply.ok) {
        this.showBanner(`The survey is unavailable right now (HTTP ${reply.status}).`);
        return;
      }
      const pair = (await reply.json()) as PairPayload;
      this.hideBanner();
      this.renderPair(pair);
    } catch {
      this.showBanner('Could not reach the survey service.');
    } finally {
      this.inFlight = false;
    }
  }

  private renderPair(pair: PairPayload): void {
    this.currentPair = pair;
    this.renderItem(this.elems.leftPane, pair.left);
    this.renderItem(this.elems.rightPane, pair.right);
    this.setButtonsEnabled(true);
  }

  private renderItem(pane: HTMLElement, item: ItemPayload): void {
    pane.textContent = '';
    pane.dataset.itemId = item.id;
    if (item.media_uri) {
      const img = this.doc.createElement('img');
      img.className = 'pane-media';
      img.src = item.media_uri;
      img.alt = 'comparison item';
      pane.appendChild(img);
      return;
    }
    // Degraded mode: no media, show the item's attributes as a card.
    const card = this.doc.createElement('dl');
    card.className = 'attribute-card';
    for (const name of Object.keys(item.attributes).sort()) {
      const dt = this.doc.createElement('dt');
      dt.textContent = name;
      const dd = this.doc.createElement('dd');
      dd.textContent = String(item.attributes[name]);
      card.appendChild(dt);
      card.appendChild(dd);
    }
    pane.appendChild(card);
  }

  async submit(choice: Choice): Promise<void> {
    if (this.inFlight || this.currentPair === null) return;
    this.inFlight = true;
    this.setButtonsEnabled(false);
    const pair = this.currentPair;
    const responseId = uuid();
    const body = JSON.stringify({
      response_id: responseId,
      pair_id: pair.pair_id,
      choice,
      respondent: this.respondentId,
    });
    try {
      for (let attempt = 1; ; attempt++) {
        let reply: Response;
        try {
          reply = await fetch(`${this.baseUrl}/api/response`, {
            method: 'POST',
            headers: { 'content-type': 'application/json' },
            body,
          });
        } catch {
          // Network failure: the response id is reused, so a retry can
          // never create a second record for this judgment.
          if (attempt >= MAX_ATTEMPTS) {
            this.showBanner('Could not submit; check your connection and retry.');
            return;
          }
          await sleep(RETRY_DELAY_MS);
          continue;
        }
        if (reply.ok) {
          this.submitted += 1;
          this.elems.progress.textContent = `${this.submitted} judged`;
          break;
        }
        this.showBanner(`The service rejected the submission (HTTP ${reply.status}).`);
        return;
      }
    } finally {
      this.inFlight = false;
    }
    await this.loadPair();
  }
}

const root = typeof document !== 'undefined' ? document.getElementById('survey-root') : null;
if (root && root.dataset.autoInit !== 'off') {
  new SurveyApp();
}
