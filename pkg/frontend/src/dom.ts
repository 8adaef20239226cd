// Browser wiring: DOM views for the survey and map pages, keyboard shortcuts.

import { ApiClient } from './api.js';
import { MapPage, type MapView } from './map.js';
import { SurveyController, type SurveyView } from './survey.js';
import type { PairPayload } from './types.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

class DomSurveyView implements SurveyView {
  constructor(
    private readonly root: HTMLElement,
    private readonly controller: () => SurveyController,
  ) {}

  showLoading(): void {
    this.root.innerHTML = '<p class="status">Loading a pair…</p>';
  }

  showSubmitting(): void {
    this.root.querySelectorAll('button, img').forEach((node) => {
      (node as HTMLElement).setAttribute('aria-disabled', 'true');
    });
  }

  showDone(): void {
    this.root.innerHTML = '<p class="status">No more pairs to compare. Thank you!</p>';
  }

  showRetry(message: string): void {
    this.root.innerHTML = '';
    this.root.append(el('p', 'status', `Could not load a pair (${message}).`));
    const retry = el('button', 'retry', 'Retry');
    retry.addEventListener('click', () => void this.controller().start());
    this.root.append(retry);
  }

  showPair(pair: PairPayload): void {
    this.root.innerHTML = '';
    this.root.append(el('h2', 'question', 'Which place looks safer?'));
    const row = el('div', 'pair-row');

    const sideButton = (url: string, side: 'left' | 'right') => {
      const button = el('button', `side ${side}`);
      const image = el('img');
      image.src = url;
      image.alt = `${side} street view`;
      // A broken image must not be votable blind: offer a skip instead.
      image.addEventListener('error', () => this.showSkipControl());
      button.append(image);
      button.addEventListener('click', () => void this.controller().click(side));
      return button;
    };

    row.append(sideButton(pair.left.image_url, 'left'));
    row.append(sideButton(pair.right.image_url, 'right'));
    this.root.append(row);

    const equal = el('button', 'equal', 'Equal');
    equal.addEventListener('click', () => void this.controller().click('equal'));
    this.root.append(equal);
  }

  private showSkipControl(): void {
    if (this.root.querySelector('.skip')) return;
    const skip = el('button', 'skip', 'Image failed to load — skip this pair');
    skip.addEventListener('click', () => void this.controller().skip());
    this.root.append(skip);
  }
}

class DomMapView implements MapView {
  constructor(private readonly root: HTMLElement) {}

  showMap(svg: string, markerCount: number): void {
    this.root.innerHTML =
      `<p class="status">${markerCount} scored images</p>` + svg;
  }

  showNotFound(zone: string): void {
    this.root.innerHTML = `<p class="status">No map for zone “${zone}”.</p>`;
  }

  showError(message: string): void {
    this.root.innerHTML = `<p class="status">Map failed to load (${message}).</p>`;
  }
}

export function mountSurvey(root: HTMLElement, api: ApiClient): SurveyController {
  let controller: SurveyController;
  const view = new DomSurveyView(root, () => controller);
  controller = new SurveyController(api, view);

  // Throughput shortcuts: arrows mirror the three click targets.
  document.addEventListener('keydown', (event) => {
    if (event.key === 'ArrowLeft') void controller.click('left');
    else if (event.key === 'ArrowDown') void controller.click('equal');
    else if (event.key === 'ArrowRight') void controller.click('right');
  });

  void controller.start();
  return controller;
}

export function mountMap(root: HTMLElement, api: ApiClient, zone: string): MapPage {
  const page = new MapPage(api, new DomMapView(root));
  void page.load(zone);
  return page;
}
