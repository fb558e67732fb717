/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    dice_after(): number;
    dice_before(): number;
    fixed_rgba(): Uint8Array;
    /**
     * Fraction of foreground voxels where the current field folds.
     */
    folding_fraction(): number;
    jacobian_rgba(): Uint8Array;
    /**
     * Loss after each optimization step of the last registration.
     */
    loss_trace(): Float64Array;
    moving_rgba(): Uint8Array;
    /**
     * A new synthetic pair; `size` must be at least 8.
     */
    constructor(size: number, amplitude: number, seed: number);
    /**
     * Registers the pair from scratch and returns the final loss.
     */
    register(lambda: number, iterations: number): number;
    size(): number;
    warped_rgba(): Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_dice_after: (a: number) => number;
    readonly demo_dice_before: (a: number) => number;
    readonly demo_fixed_rgba: (a: number) => [number, number];
    readonly demo_folding_fraction: (a: number) => number;
    readonly demo_jacobian_rgba: (a: number) => [number, number];
    readonly demo_loss_trace: (a: number) => [number, number];
    readonly demo_moving_rgba: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_register: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_size: (a: number) => number;
    readonly demo_warped_rgba: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
