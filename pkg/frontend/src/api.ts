// Thin typed client for the annotation service HTTP API.

export interface WindowItem {
  index: number
  channels: number[][]
  sample_rate_hz: number
  class_names: string[]
}

export interface Progress {
  session_id: string
  total: number
  labeled: number
  pending: number
  finalized: boolean
  per_annotator: Record<string, number>
}

export interface ExpertSetDoc {
  indices: number[]
  corrected_labels: number[]
  source: string
  annotators?: string[]
  fleiss_kappa?: number
}

export interface SubmitAck {
  accepted: number
  labeled: number
  total: number
}

export class ApiError extends Error {
  constructor(public status: number, public code: string, detail: string) {
    super(detail)
  }
}

async function parse<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => ({}))
  if (!resp.ok) {
    throw new ApiError(resp.status, (body as any).error ?? 'unknown',
      (body as any).detail ?? resp.statusText)
  }
  return body as T
}

export class AnnotationApi {
  constructor(private baseUrl: string, private sessionId: string,
              private annotatorId: string) {}

  async nextBatch(size: number): Promise<WindowItem[]> {
    const url = `${this.baseUrl}/sessions/${this.sessionId}/batch` +
      `?annotator=${encodeURIComponent(this.annotatorId)}&size=${size}`
    return parse<WindowItem[]>(await fetch(url))
  }

  async submit(index: number, label: number): Promise<SubmitAck> {
    const url = `${this.baseUrl}/sessions/${this.sessionId}/labels`
    return parse<SubmitAck>(await fetch(url, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({
        annotator_id: this.annotatorId,
        labels: [{ index, label }],
      }),
    }))
  }

  async progress(): Promise<Progress> {
    const url = `${this.baseUrl}/sessions/${this.sessionId}/progress`
    return parse<Progress>(await fetch(url))
  }

  async finalize(): Promise<ExpertSetDoc> {
    const url = `${this.baseUrl}/sessions/${this.sessionId}/finalize`
    return parse<ExpertSetDoc>(await fetch(url, { method: 'POST' }))
  }
}
