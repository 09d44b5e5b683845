/** The packed-layout strip: one cell per token of the encoded sample the
 * model actually saw, colored by token type, with loss-masked positions
 * marked. Cell data derives only from the service's layout payload. */

import type { LayoutStrip } from "./api";

export interface TokenTypeMeta {
  id: number;
  short: string;
  label: string;
  color: string;
}

export const TOKEN_TYPES: TokenTypeMeta[] = [
  { id: 0, short: "P", label: "reference parent", color: "#b6d4f0" },
  { id: 1, short: "R", label: "reference reply", color: "#7fb3e0" },
  { id: 2, short: "S", label: "target speaker", color: "#f4b459" },
  { id: 3, short: "NS", label: "other speaker", color: "#d8d8d8" },
];

export interface StripCell {
  position: number;
  tokenId: number;
  typeId: number;
  short: string;
  color: string;
  masked: boolean;
  generated: boolean;
  segment: "reference" | "conversation";
}

export function stripLength(layout: LayoutStrip): number {
  return layout.ref_len + layout.conv_len;
}

export function layoutIsConsistent(layout: LayoutStrip): boolean {
  const n = stripLength(layout);
  return (
    layout.token_ids.length === n &&
    layout.type_ids.length === n &&
    layout.position_ids.length === n &&
    layout.loss_mask.length === n
  );
}

export function buildStripCells(layout: LayoutStrip): StripCell[] {
  if (!layoutIsConsistent(layout)) {
    throw new Error("layout arrays disagree with ref_len + conv_len");
  }
  const cells: StripCell[] = [];
  for (let i = 0; i < layout.token_ids.length; i++) {
    const meta = TOKEN_TYPES[layout.type_ids[i]] ?? TOKEN_TYPES[3];
    cells.push({
      position: layout.position_ids[i],
      tokenId: layout.token_ids[i],
      typeId: layout.type_ids[i],
      short: meta.short,
      color: meta.color,
      masked: layout.loss_mask[i] === 1,
      generated: i >= layout.generated_from,
      segment: i < layout.ref_len ? "reference" : "conversation",
    });
  }
  return cells;
}
