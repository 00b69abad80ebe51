// Client-side session state: the fetched queue, the item being labeled,
// progress counts, and the single-slot submission buffer used for retries.
// Pure logic, no DOM and no network, so it is directly unit-testable.

import type { Progress, WindowItem } from './api.js'

export type Phase = 'loading' | 'labeling' | 'submitting' | 'done' | 'error'

export interface PendingSubmit {
  index: number
  label: number
  attempts: number
}

export class SessionState {
  phase: Phase = 'loading'
  queue: WindowItem[] = []
  cursor = 0
  labeled = 0
  total = 0
  pending: PendingSubmit | null = null
  lastError: string | null = null

  current(): WindowItem | null {
    return this.cursor < this.queue.length ? this.queue[this.cursor] : null
  }

  remaining(): number {
    return Math.max(this.total - this.labeled, 0)
  }

  loadBatch(items: WindowItem[], progress: Progress): void {
    this.total = progress.total
    this.labeled = progress.labeled
    this.queue = items
    this.cursor = 0
    this.lastError = null
    this.phase = items.length > 0 ? 'labeling' : 'done'
  }

  // Returns the submission to send, or null if there is nothing to label.
  beginSubmit(label: number): PendingSubmit | null {
    const item = this.current()
    if (!item || this.phase === 'submitting') return null
    const classCount = item.class_names.length
    if (label < 0 || label >= classCount) return null
    this.pending = { index: item.index, label, attempts: (this.pending?.index === item.index ? this.pending.attempts : 0) + 1 }
    this.phase = 'submitting'
    return this.pending
  }

  ackSubmit(ack: { labeled: number; total: number }): void {
    this.pending = null
    this.lastError = null
    this.labeled = ack.labeled
    this.total = ack.total
    this.cursor += 1
    if (this.current()) {
      this.phase = 'labeling'
    } else {
      // queue drained: more items may exist server-side for this session
      this.phase = this.remaining() > 0 ? 'loading' : 'done'
    }
  }

  failSubmit(message: string): void {
    // keep the current item and the buffered label; the user retries
    this.lastError = message
    this.phase = 'labeling'
  }

  queueExhausted(): boolean {
    return this.cursor >= this.queue.length
  }
}
