/** Display <-> image coordinate mapping under integer zoom.
 *
 * An image pixel (x, y) occupies the display square
 * [x*zoom, (x+1)*zoom) x [y*zoom, (y+1)*zoom), so mapping a display point
 * back to the image is an exact floor division; the two directions are
 * exact inverses for every display point inside the canvas.
 */

export interface ViewTransform {
  zoom: number; // integer display pixels per image pixel
}

export interface Point {
  x: number;
  y: number;
}

export function displayToImage(p: Point, t: ViewTransform): Point {
  return { x: Math.floor(p.x / t.zoom), y: Math.floor(p.y / t.zoom) };
}

/** Top-left display corner of an image pixel. */
export function imageToDisplay(p: Point, t: ViewTransform): Point {
  return { x: p.x * t.zoom, y: p.y * t.zoom };
}

/** Display center of an image pixel (where click markers are drawn). */
export function imagePixelCenter(p: Point, t: ViewTransform): Point {
  return { x: (p.x + 0.5) * t.zoom, y: (p.y + 0.5) * t.zoom };
}
