// Entry point: "#map/<zone>" renders a zone map, anything else the survey.

import { ApiClient } from './api.js';
import { mountMap, mountSurvey } from './dom.js';

function route(): void {
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app element');
  const api = new ApiClient((url, init) => fetch(url, init));

  const hash = window.location.hash;
  const mapMatch = /^#map\/(.+)$/.exec(hash);
  if (mapMatch && mapMatch[1]) {
    mountMap(root, api, decodeURIComponent(mapMatch[1]));
  } else {
    mountSurvey(root, api);
  }
}

window.addEventListener('hashchange', () => window.location.reload());
route();
