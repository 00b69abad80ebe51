import { describe, expect, it } from 'vitest'
import { SessionState } from '../src/state.js'
import type { Progress, WindowItem } from '../src/api.js'

const item = (index: number): WindowItem => ({
  index,
  channels: [[0, 1, 2], [3, 4, 5]],
  sample_rate_hz: 10,
  class_names: ['a', 'b', 'c'],
})

const progress = (labeled: number, total: number): Progress => ({
  session_id: 's', total, labeled, pending: total - labeled,
  finalized: false, per_annotator: {},
})

describe('SessionState', () => {
  it('loads a batch and exposes the first item', () => {
    const s = new SessionState()
    s.loadBatch([item(5), item(7)], progress(0, 10))
    expect(s.phase).toBe('labeling')
    expect(s.current()?.index).toBe(5)
    expect(s.total).toBe(10)
  })

  it('empty batch means done', () => {
    const s = new SessionState()
    s.loadBatch([], progress(10, 10))
    expect(s.phase).toBe('done')
    expect(s.current()).toBeNull()
  })

  it('submit/ack advances and tracks progress', () => {
    const s = new SessionState()
    s.loadBatch([item(1), item(2)], progress(0, 2))
    const pending = s.beginSubmit(2)
    expect(pending).toEqual({ index: 1, label: 2, attempts: 1 })
    expect(s.phase).toBe('submitting')
    s.ackSubmit({ labeled: 1, total: 2 })
    expect(s.labeled).toBe(1)
    expect(s.current()?.index).toBe(2)
    expect(s.phase).toBe('labeling')
  })

  it('rejects out-of-range labels', () => {
    const s = new SessionState()
    s.loadBatch([item(1)], progress(0, 1))
    expect(s.beginSubmit(3)).toBeNull()
    expect(s.beginSubmit(-1)).toBeNull()
    expect(s.phase).toBe('labeling')
  })

  it('failure keeps the item and surfaces the error', () => {
    const s = new SessionState()
    s.loadBatch([item(4)], progress(0, 1))
    s.beginSubmit(0)
    s.failSubmit('network down')
    expect(s.lastError).toBe('network down')
    expect(s.current()?.index).toBe(4)     // item retained
    expect(s.phase).toBe('labeling')
    // retry counts attempts on the same item
    const again = s.beginSubmit(0)
    expect(again?.attempts).toBe(2)
  })

  it('no double submit while one is in flight', () => {
    const s = new SessionState()
    s.loadBatch([item(1)], progress(0, 1))
    expect(s.beginSubmit(0)).not.toBeNull()
    expect(s.beginSubmit(1)).toBeNull()
  })

  it('drained queue with work remaining goes to loading, not done', () => {
    const s = new SessionState()
    s.loadBatch([item(0)], progress(0, 5))
    s.beginSubmit(1)
    s.ackSubmit({ labeled: 1, total: 5 })
    expect(s.phase).toBe('loading')   // more items exist server-side
    s.loadBatch([item(1)], progress(1, 5))
    expect(s.phase).toBe('labeling')
  })

  it('completion after the last ack', () => {
    const s = new SessionState()
    s.loadBatch([item(9)], progress(0, 1))
    s.beginSubmit(1)
    s.ackSubmit({ labeled: 1, total: 1 })
    expect(s.phase).toBe('done')
    expect(s.remaining()).toBe(0)
  })
})
