/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_dice_after: (a: number) => number;
export const demo_dice_before: (a: number) => number;
export const demo_fixed_rgba: (a: number) => [number, number];
export const demo_folding_fraction: (a: number) => number;
export const demo_jacobian_rgba: (a: number) => [number, number];
export const demo_loss_trace: (a: number) => [number, number];
export const demo_moving_rgba: (a: number) => [number, number];
export const demo_new: (a: number, b: number, c: number) => [number, number, number];
export const demo_register: (a: number, b: number, c: number) => [number, number, number];
export const demo_size: (a: number) => number;
export const demo_warped_rgba: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
