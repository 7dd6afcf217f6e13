// jsdom has no 2d raster backend; getContext would log a noisy
// "Not implemented" for every draw and then yield null anyway.
// Returning null directly keeps the same guard path, quietly.
HTMLCanvasElement.prototype.getContext = (() => null) as typeof HTMLCanvasElement.prototype.getContext;
