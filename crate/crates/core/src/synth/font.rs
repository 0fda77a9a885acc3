//! Built-in 5×7 bitmap font. Each glyph is seven rows; bit 4 is the leftmost column.

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;
/// Horizontal advance in font units (glyph plus one column of spacing).
pub const ADVANCE: usize = 6;

const fn rows(r: [u8; 7]) -> [u8; 7] {
    r
}

const LETTERS: [[u8; 7]; 26] = [
    rows([0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]), // A
    rows([0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110]), // B
    rows([0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110]), // C
    rows([0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110]), // D
    rows([0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111]), // E
    rows([0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000]), // F
    rows([0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111]), // G
    rows([0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]), // H
    rows([0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]), // I
    rows([0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100]), // J
    rows([0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001]), // K
    rows([0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111]), // L
    rows([0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001]), // M
    rows([0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001]), // N
    rows([0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]), // O
    rows([0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000]), // P
    rows([0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101]), // Q
    rows([0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001]), // R
    rows([0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110]), // S
    rows([0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100]), // T
    rows([0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]), // U
    rows([0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100]), // V
    rows([0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010]), // W
    rows([0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001]), // X
    rows([0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100]), // Y
    rows([0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111]), // Z
];

const DIGITS: [[u8; 7]; 10] = [
    rows([0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]), // 0
    rows([0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]), // 1
    rows([0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111]), // 2
    rows([0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110]), // 3
    rows([0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]), // 4
    rows([0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]), // 5
    rows([0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110]), // 6
    rows([0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]), // 7
    rows([0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]), // 8
    rows([0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100]), // 9
];

pub const DEFAULT_CHARSET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

pub fn glyph(c: char) -> Option<&'static [u8; 7]> {
    match c {
        'A'..='Z' => Some(&LETTERS[c as usize - 'A' as usize]),
        '0'..='9' => Some(&DIGITS[c as usize - '0' as usize]),
        _ => None,
    }
}

/// Whether font cell (`col`, `row`) of `c` is inked.
pub fn inked(c: char, col: usize, row: usize) -> bool {
    match glyph(c) {
        Some(g) if col < GLYPH_W && row < GLYPH_H => g[row] >> (GLYPH_W - 1 - col) & 1 == 1,
        _ => false,
    }
}
