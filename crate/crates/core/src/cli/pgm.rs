/// Binary portable graymap with maxval 255.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Linear map of `[0, max]` onto `0..=255`, clamping outside.
pub fn to_gray(values: &[f64], max: f64) -> Vec<u8> {
    values.iter().map(|&v| ((v / max).clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Width, height and pixels of a P5 image written by [`encode_pgm`].
pub fn decode_pgm(bytes: &[u8]) -> Option<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let (w, h): (usize, usize) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
    let pixels = bytes.get(pos..)?.to_vec();
    (pixels.len() == w * h).then_some((w, h, pixels))
}
