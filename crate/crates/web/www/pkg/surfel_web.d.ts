/* tslint:disable */
/* eslint-disable */

/**
 * A dataset plus a trainer that the page advances a few steps at a time.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `full_method` trains with the convergence loss and the corrected
     * criterion; otherwise distortion loss and median depth.
     */
    constructor(full_method: boolean);
    /**
     * RGBA strip of four panels: target, render, median depth, corrected
     * depth. Depth panels show error against ground truth; magenta marks
     * pixels where the criterion never fired.
     */
    panels(view: number): Uint8Array;
    size(): number;
    surfels(): number;
    /**
     * Runs `steps` optimization steps; returns the last total loss.
     */
    train(steps: number): number;
    views(): number;
}

/**
 * Both criteria on one ray of hits spaced one unit apart, with the given
 * per-hit opacities. Returns `[median, corrected, final transmittance]`.
 */
export function ray_depths(opacities: Float64Array): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_new: (a: number) => [number, number, number];
    readonly demo_panels: (a: number, b: number) => [number, number, number, number];
    readonly demo_size: (a: number) => number;
    readonly demo_surfels: (a: number) => number;
    readonly demo_train: (a: number, b: number) => [number, number, number];
    readonly demo_views: (a: number) => number;
    readonly ray_depths: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
