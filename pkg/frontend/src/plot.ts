// Stacked per-channel line plots rendered as SVG. One polyline path per
// channel, each normalized to its own band, with a shared time axis in
// seconds (samples / sample_rate_hz). SVG keeps the output inspectable in
// headless tests; no canvas dependency.

export interface PlotLayout {
  width: number
  bandHeight: number
  padX: number
  padY: number
}

export const DEFAULT_LAYOUT: PlotLayout = {
  width: 760,
  bandHeight: 90,
  padX: 42,
  padY: 8,
}

export function tracePath(samples: number[], x0: number, y0: number,
                          width: number, height: number): string {
  if (samples.length === 0) return ''
  let lo = Infinity
  let hi = -Infinity
  for (const v of samples) {
    if (v < lo) lo = v
    if (v > hi) hi = v
  }
  const span = hi - lo || 1
  const n = samples.length
  const parts: string[] = []
  for (let i = 0; i < n; i++) {
    const x = x0 + (n === 1 ? 0 : (i / (n - 1)) * width)
    const y = y0 + height - ((samples[i] - lo) / span) * height
    parts.push(`${i === 0 ? 'M' : 'L'}${x.toFixed(2)},${y.toFixed(2)}`)
  }
  return parts.join(' ')
}

export function timeTicks(samples: number, rateHz: number, count = 5): Array<{ frac: number; label: string }> {
  const duration = rateHz > 0 ? samples / rateHz : samples
  const ticks: Array<{ frac: number; label: string }> = []
  for (let i = 0; i < count; i++) {
    const frac = count === 1 ? 0 : i / (count - 1)
    const t = frac * duration
    ticks.push({ frac, label: `${t.toFixed(t < 10 ? 2 : 1)}s` })
  }
  return ticks
}

export function renderWindowSvg(channels: number[][], rateHz: number,
                                layout: PlotLayout = DEFAULT_LAYOUT): string {
  const { width, bandHeight, padX, padY } = layout
  const plotW = width - 2 * padX
  const height = channels.length * bandHeight + 2 * padY + 20
  const parts: string[] = []
  parts.push(`<svg class="window-plot" viewBox="0 0 ${width} ${height}" ` +
    `width="${width}" height="${height}" xmlns="http://www.w3.org/2000/svg">`)
  channels.forEach((samples, ch) => {
    const y0 = padY + ch * bandHeight
    parts.push(`<rect x="${padX}" y="${y0}" width="${plotW}" ` +
      `height="${bandHeight - 6}" class="band" fill="none" stroke="#ddd"/>`)
    parts.push(`<text x="4" y="${y0 + bandHeight / 2}" class="channel-label" ` +
      `font-size="11">ch${ch}</text>`)
    const d = tracePath(samples, padX, y0 + 4, plotW, bandHeight - 14)
    parts.push(`<path class="trace" data-channel="${ch}" d="${d}" ` +
      `fill="none" stroke="#1565c0" stroke-width="1"/>`)
  })
  const axisY = padY + channels.length * bandHeight + 12
  const n = channels.length > 0 ? channels[0].length : 0
  for (const tick of timeTicks(n, rateHz)) {
    const x = padX + tick.frac * plotW
    parts.push(`<text x="${x.toFixed(1)}" y="${axisY}" class="tick" ` +
      `font-size="10" text-anchor="middle">${tick.label}</text>`)
  }
  parts.push('</svg>')
  return parts.join('')
}
