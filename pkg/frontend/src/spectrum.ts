// Bar-chart layout for the queried pixel's per-band values. Geometry is
// computed here as pure data so it can be tested without a canvas.

export interface Bar {
  x: number;
  y: number;
  width: number;
  height: number;
  label: string;
  value: number;
}

export interface SpectrumLayout {
  bars: Bar[];
  zeroLine: number;
}

export function layoutSpectrum(
  values: number[],
  width: number,
  height: number,
  pad = 4,
): SpectrumLayout {
  if (values.length === 0) {
    return { bars: [], zeroLine: height - pad };
  }
  const lo = Math.min(0, ...values);
  const hi = Math.max(0, ...values);
  const span = hi - lo || 1;
  const innerH = height - 2 * pad;
  const scale = innerH / span;
  const zeroLine = pad + hi * scale;
  const slot = (width - 2 * pad) / values.length;
  const barWidth = Math.max(1, slot * 0.7);
  const bars = values.map((value, i) => {
    const x = pad + i * slot + (slot - barWidth) / 2;
    const top = value >= 0 ? zeroLine - value * scale : zeroLine;
    return {
      x,
      y: top,
      width: barWidth,
      height: Math.abs(value) * scale,
      label: `b${i}`,
      value,
    };
  });
  return { bars, zeroLine };
}

export function drawSpectrum(
  ctx: CanvasRenderingContext2D,
  values: number[],
  width: number,
  height: number,
): void {
  const layout = layoutSpectrum(values, width, height);
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#888";
  ctx.beginPath();
  ctx.moveTo(0, layout.zeroLine);
  ctx.lineTo(width, layout.zeroLine);
  ctx.stroke();
  ctx.fillStyle = "#4477aa";
  for (const bar of layout.bars) {
    ctx.fillRect(bar.x, bar.y, bar.width, bar.height);
  }
}
