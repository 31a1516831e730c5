/** Stable per-instance colors; id 0 (background) is transparent.
 *
 * Matches the backend's indexed-PNG palette so overlays and exported
 * masks agree visually.
 */

export type RGB = [number, number, number];

const BASE: RGB[] = [
  [0, 0, 0],
  [230, 70, 60],
  [70, 160, 230],
  [80, 200, 110],
  [235, 195, 50],
  [170, 90, 220],
  [240, 130, 40],
  [60, 210, 200],
  [220, 100, 170],
];

function hsvToRgb(h: number, s: number, v: number): RGB {
  const i = Math.floor(h * 6) % 6;
  const f = h * 6 - Math.floor(h * 6);
  const p = v * (1 - s);
  const q = v * (1 - f * s);
  const t = v * (1 - (1 - f) * s);
  const pick: RGB[] = [
    [v, t, p],
    [q, v, p],
    [p, v, t],
    [p, q, v],
    [t, p, v],
    [v, p, q],
  ];
  return pick[i].map((c) => Math.round(255 * c)) as RGB;
}

export function instanceColor(id: number): RGB {
  if (id < 0) throw new Error(`invalid instance id ${id}`);
  if (id < BASE.length) return BASE[id];
  const hue = (id * 0.61803398875) % 1.0;
  return hsvToRgb(hue, 0.75, 0.95);
}

export function cssColor(id: number): string {
  const [r, g, b] = instanceColor(id);
  return `rgb(${r}, ${g}, ${b})`;
}
