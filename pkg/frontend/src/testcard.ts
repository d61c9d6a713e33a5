// Raster painting for the synthetic test-card frames. No codec: the card
// header fully determines the picture, so rendering is a pure function of
// (card, frame id) into an RGBA buffer the canvas can blit.

import { StreamSource, TestCard } from "./protocol.js";

const SOURCE_TINT: Record<StreamSource, [number, number, number]> = {
  [StreamSource.PI_DESKTOP]: [38, 70, 120], // blue desktop
  [StreamSource.RGB_MAIN]: [40, 110, 60], // green camera
  [StreamSource.STEREO_DOWN]: [90, 90, 90], // grayscale stereo pair
};

export function paintTestCard(card: TestCard): Uint8ClampedArray<ArrayBuffer> {
  const { width, height } = card;
  const pixels = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  const [tr, tg, tb] = SOURCE_TINT[card.source] ?? [60, 60, 60];
  const phase = card.frameId % 64;

  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const offset = (y * width + x) * 4;
      // moving diagonal stripes make motion and frame cadence visible
      const stripe = ((x + y + phase * 4) >> 5) % 2 === 0 ? 36 : 0;
      // color bars across the top edge, broadcast-test-card style
      const bar = y < height / 8 ? (Math.floor((x / width) * 8) * 24) : 0;
      pixels[offset] = tr + stripe + bar;
      pixels[offset + 1] = tg + stripe + (bar ? 255 - bar : 0) / 4;
      pixels[offset + 2] = tb + stripe;
      pixels[offset + 3] = 255;
    }
  }

  drawCursor(pixels, width, height, card.cursorX, card.cursorY);
  return pixels;
}

function drawCursor(pixels: Uint8ClampedArray, width: number, height: number, cx: number, cy: number): void {
  const arm = 9;
  for (let d = -arm; d <= arm; d++) {
    setWhite(pixels, width, height, cx + d, cy);
    setWhite(pixels, width, height, cx, cy + d);
  }
}

function setWhite(pixels: Uint8ClampedArray, width: number, height: number, x: number, y: number): void {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const offset = (y * width + x) * 4;
  pixels[offset] = 255;
  pixels[offset + 1] = 255;
  pixels[offset + 2] = 255;
  pixels[offset + 3] = 255;
}
