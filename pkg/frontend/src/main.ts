// Entry point: configuration comes from the URL query string
// (?session_id=...&annotator_id=...&base_url=...&batch_size=...).

import { AnnotationApp } from './app.js'

function boot(): void {
  const params = new URLSearchParams(window.location.search)
  const sessionId = params.get('session_id')
  const annotatorId = params.get('annotator_id')
  const root = document.getElementById('app')
  if (!root) return
  if (!sessionId || !annotatorId) {
    root.innerHTML = '<div class="error-banner">session_id and annotator_id ' +
      'query parameters are required</div>'
    return
  }
  const app = new AnnotationApp(root as HTMLElement, {
    baseUrl: params.get('base_url') ?? '',
    sessionId,
    annotatorId,
    batchSize: parseInt(params.get('batch_size') ?? '10', 10),
  })
  void app.start()
}

boot()
