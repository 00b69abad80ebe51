// DOM wiring: renders the current window, class buttons with keyboard
// shortcuts 1..C, progress and error banners, and the completion screen with
// a finalize affordance. All science stays server-side; this file only plots
// and posts labels.

import { AnnotationApi, ApiError } from './api.js'
import { renderWindowSvg } from './plot.js'
import { SessionState } from './state.js'

export interface AppConfig {
  baseUrl: string
  sessionId: string
  annotatorId: string
  batchSize: number
}

export class AnnotationApp {
  readonly state = new SessionState()
  private api: AnnotationApi

  constructor(private root: HTMLElement, private config: AppConfig,
              api?: AnnotationApi) {
    this.api = api ?? new AnnotationApi(config.baseUrl, config.sessionId,
      config.annotatorId)
    this.onKeyDown = this.onKeyDown.bind(this)
  }

  async start(): Promise<void> {
    document.addEventListener('keydown', this.onKeyDown)
    await this.fetchMore()
    this.render()
  }

  stop(): void {
    document.removeEventListener('keydown', this.onKeyDown)
  }

  private async fetchMore(): Promise<void> {
    try {
      const [items, progress] = await Promise.all([
        this.api.nextBatch(this.config.batchSize),
        this.api.progress(),
      ])
      this.state.loadBatch(items, progress)
    } catch (err) {
      this.state.lastError = errorText(err)
      this.state.phase = 'error'
    }
  }

  onKeyDown(ev: KeyboardEvent): void {
    const digit = parseInt(ev.key, 10)
    if (!Number.isNaN(digit) && digit >= 1) {
      void this.submit(digit - 1)
    }
  }

  async submit(label: number): Promise<void> {
    const pending = this.state.beginSubmit(label)
    if (!pending) return
    this.render()
    try {
      const ack = await this.api.submit(pending.index, pending.label)
      this.state.ackSubmit(ack)
      this.render()  // never leave the acked item on screen
      if (this.state.queueExhausted() && this.state.remaining() > 0) {
        await this.fetchMore()
      }
    } catch (err) {
      this.state.failSubmit(errorText(err))
    }
    this.render()
  }

  async finalize(): Promise<void> {
    try {
      const expert = await this.api.finalize()
      const kappa = expert.fleiss_kappa !== undefined
        ? ` (Fleiss kappa ${(expert.fleiss_kappa * 100).toFixed(1)})` : ''
      this.banner(`Session finalized: ${expert.indices.length} labels saved${kappa}.`,
        'finalized-banner')
    } catch (err) {
      this.banner(`Finalize failed: ${errorText(err)}`, 'error-banner')
    }
  }

  render(): void {
    const s = this.state
    const item = s.current()
    const header = `<div class="progress" data-labeled="${s.labeled}">` +
      `${s.labeled} / ${s.total} labeled</div>`
    const error = s.lastError
      ? `<div class="error-banner">${escapeHtml(s.lastError)} ` +
        `<button class="retry">retry</button></div>`
      : ''

    if (s.phase === 'loading') {
      this.root.innerHTML = `${header}${error}` +
        `<div class="loading">fetching more windows…</div>`
      this.bind()
      return
    }
    if (s.phase === 'done' || (item === null && s.phase !== 'error')) {
      this.root.innerHTML = `${header}${error}` +
        `<div class="completion">All assigned windows are labeled.` +
        `<button class="finalize">Finalize session</button></div>`
      this.bind()
      return
    }
    if (s.phase === 'error' || item === null) {
      this.root.innerHTML = `${header}` +
        `<div class="error-banner">${escapeHtml(s.lastError ?? 'unknown error')}` +
        `<button class="retry">retry</button></div>`
      this.bind()
      return
    }

    const plot = renderWindowSvg(item.channels, item.sample_rate_hz)
    const buttons = item.class_names.map((name, i) =>
      `<button class="class-btn" data-label="${i}">` +
      `<span class="key">${i + 1}</span> ${escapeHtml(name)}</button>`).join('')
    const busy = s.phase === 'submitting' ? '<div class="saving">saving…</div>' : ''
    this.root.innerHTML = `${header}${error}` +
      `<div class="item" data-index="${item.index}">` +
      `<div class="item-title">window #${item.index}</div>${plot}</div>` +
      `<div class="classes">${buttons}</div>${busy}` +
      `<div class="hint">press 1–${item.class_names.length} to label</div>`
    this.bind()
  }

  private bind(): void {
    this.root.querySelectorAll<HTMLButtonElement>('.class-btn').forEach(btn => {
      btn.addEventListener('click', () => {
        void this.submit(parseInt(btn.dataset.label ?? '0', 10))
      })
    })
    const finalize = this.root.querySelector<HTMLButtonElement>('.finalize')
    finalize?.addEventListener('click', () => { void this.finalize() })
    const retry = this.root.querySelector<HTMLButtonElement>('.retry')
    retry?.addEventListener('click', () => {
      const pending = this.state.pending
      if (pending) {
        this.state.pending = null
        void this.submit(pending.label)
      } else {
        void this.start()
      }
    })
  }

  private banner(text: string, cls: string): void {
    const div = document.createElement('div')
    div.className = cls
    div.textContent = text
    this.root.appendChild(div)
  }
}

function errorText(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`
  return err instanceof Error ? err.message : String(err)
}

function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, ch => (
    { '&': '&amp;', '<': '&lt;', '>': '&gt;', '"': '&quot;', "'": '&#39;' }[ch] as string))
}
