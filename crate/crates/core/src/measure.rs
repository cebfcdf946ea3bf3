//! Size accounting for every value that flows through the engine.
//!
//! All memory metering (driver high-water, shuffle volume, flowed bytes)
//! is computed from [`Measurable::size_bytes`], so the rules here must be
//! stable arithmetic, not allocator truth. Composite values report at
//! least the sum of what they embed.

/// A value whose serialized size can be reported deterministically.
pub trait Measurable {
    /// Size of the value in bytes under the crate's accounting rules.
    fn size_bytes(&self) -> u64;
}

macro_rules! fixed_size {
    ($($t:ty),*) => {
        $(impl Measurable for $t {
            fn size_bytes(&self) -> u64 {
                std::mem::size_of::<$t>() as u64
            }
        })*
    };
}

fixed_size!(u8, u16, u32, u64, usize, i8, i16, i32, i64, isize, f32, f64, bool, char);

impl Measurable for String {
    fn size_bytes(&self) -> u64 {
        16 + self.len() as u64
    }
}

impl Measurable for &str {
    fn size_bytes(&self) -> u64 {
        16 + self.len() as u64
    }
}

impl Measurable for () {
    fn size_bytes(&self) -> u64 {
        0
    }
}

impl<T: Measurable> Measurable for Option<T> {
    fn size_bytes(&self) -> u64 {
        self.as_ref().map_or(0, Measurable::size_bytes)
    }
}

impl<T: Measurable> Measurable for Vec<T> {
    fn size_bytes(&self) -> u64 {
        16 + self.iter().map(Measurable::size_bytes).sum::<u64>()
    }
}

impl<A: Measurable, B: Measurable> Measurable for (A, B) {
    fn size_bytes(&self) -> u64 {
        self.0.size_bytes() + self.1.size_bytes()
    }
}

impl<A: Measurable, B: Measurable, C: Measurable> Measurable for (A, B, C) {
    fn size_bytes(&self) -> u64 {
        self.0.size_bytes() + self.1.size_bytes() + self.2.size_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_sizes() {
        assert_eq!(7i64.size_bytes(), 8);
        assert_eq!(1u8.size_bytes(), 1);
        assert_eq!("abc".to_string().size_bytes(), 19);
    }

    #[test]
    fn composite_at_least_sum_of_parts() {
        let v = vec![1i64, 2, 3];
        assert!(v.size_bytes() >= 24);
        let pair = (1i64, "xy".to_string());
        assert_eq!(pair.size_bytes(), 8 + 18);
        assert_eq!(Some(4u32).size_bytes(), 4);
        assert_eq!(None::<u32>.size_bytes(), 0);
    }
}
