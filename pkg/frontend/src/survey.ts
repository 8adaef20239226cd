// Survey flow state machine. States: loading | showing | submitting | done.
// At most one vote request is in flight; clicks outside "showing" are ignored,
// which is what debounces double-clicks. The client never computes vote codes.

import type { ApiClient } from './api.js';
import type { Click, PairPayload } from './types.js';

export type SurveyState = 'loading' | 'showing' | 'submitting' | 'done';

export interface SurveyView {
  showLoading(): void;
  showPair(pair: PairPayload): void;
  showSubmitting(): void;
  showDone(): void;
  showRetry(message: string): void;
}

export class SurveyController {
  private state: SurveyState = 'loading';
  private pair: PairPayload | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly view: SurveyView,
  ) {}

  get currentState(): SurveyState {
    return this.state;
  }

  async start(): Promise<void> {
    await this.fetchPair();
  }

  private async fetchPair(): Promise<void> {
    this.state = 'loading';
    this.pair = null;
    this.view.showLoading();
    let result;
    try {
      result = await this.api.getPair();
    } catch (err) {
      this.view.showRetry(String(err));
      return;
    }
    if (result.kind === 'exhausted') {
      this.state = 'done';
      this.view.showDone();
      return;
    }
    this.pair = result.pair;
    this.state = 'showing';
    this.view.showPair(result.pair);
  }

  /** Voter clicked an image or the equal button. */
  async click(choice: Click): Promise<void> {
    if (this.state !== 'showing' || this.pair === null) return;
    const sessionId = this.pair.session_id;
    this.state = 'submitting';
    this.view.showSubmitting();
    try {
      await this.api.postVote(sessionId, choice);
    } catch {
      // Network failure: the vote is not counted; fetch a fresh pair.
      await this.fetchPair();
      return;
    }
    // Accepted, or session gone (404/409): either way move on silently.
    await this.fetchPair();
  }

  /** An image failed to load: request a fresh pair without voting. */
  async skip(): Promise<void> {
    if (this.state !== 'showing') return;
    await this.fetchPair();
  }
}
