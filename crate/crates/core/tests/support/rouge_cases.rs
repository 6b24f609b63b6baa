//! ROUGE pairs with P/R/F1 worked out by hand.

/// (reference, hypothesis, [R-1, R-2, R-L] as (P, R, F1)), worked by hand.
pub type Case = (&'static str, &'static str, [(f64, f64, f64); 3]);

pub const Z: (f64, f64, f64) = (0.0, 0.0, 0.0);
pub const ONE: (f64, f64, f64) = (1.0, 1.0, 1.0);

pub fn cases() -> Vec<Case> {
    vec![
        ("the cat sat", "the cat", [(1.0, 2.0 / 3.0, 0.8), (1.0, 0.5, 2.0 / 3.0), (1.0, 2.0 / 3.0, 0.8)]),
        ("a b c d", "a c d b", [ONE, (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0), (0.75, 0.75, 0.75)]),
        ("moderate left pleural effusion", "moderate left pleural effusion", [ONE, ONE, ONE]),
        ("a b", "c d", [Z, Z, Z]),
        ("a b c", "", [Z, Z, Z]),
        ("", "a", [Z, Z, Z]),
        ("the the cat", "the the the the", [(0.5, 2.0 / 3.0, 4.0 / 7.0), (1.0 / 3.0, 0.5, 0.4), (0.5, 2.0 / 3.0, 4.0 / 7.0)]),
        ("a", "a", [ONE, Z, ONE]),
        ("a b a b", "b a", [(1.0, 0.5, 2.0 / 3.0), (1.0, 1.0 / 3.0, 0.5), (1.0, 0.5, 2.0 / 3.0)]),
        (
            "no acute cardiopulmonary process",
            "no acute process",
            [(1.0, 0.75, 6.0 / 7.0), (0.5, 1.0 / 3.0, 0.4), (1.0, 0.75, 6.0 / 7.0)],
        ),
        ("small left pleural effusion", "left small effusion pleural", [ONE, Z, (0.5, 0.5, 0.5)]),
        ("a b c", "a b c d e f", [(0.5, 1.0, 2.0 / 3.0), (0.4, 1.0, 4.0 / 7.0), (0.5, 1.0, 2.0 / 3.0)]),
        ("x y z", "z y x", [ONE, Z, (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)]),
        ("a a a", "a", [(1.0, 1.0 / 3.0, 0.5), Z, (1.0, 1.0 / 3.0, 0.5)]),
        ("a", "a a a", [(1.0 / 3.0, 1.0, 0.5), Z, (1.0 / 3.0, 1.0, 0.5)]),
        (
            "the heart is normal",
            "the heart size is normal",
            [(0.8, 1.0, 8.0 / 9.0), (0.5, 2.0 / 3.0, 4.0 / 7.0), (0.8, 1.0, 8.0 / 9.0)],
        ),
        ("a b", "b a", [ONE, Z, (0.5, 0.5, 0.5)]),
        ("a b c d e", "a x c y e", [(0.6, 0.6, 0.6), Z, (0.6, 0.6, 0.6)]),
        ("a b a", "a a b", [ONE, (0.5, 0.5, 0.5), (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0)]),
        ("effusion", "effusion effusion", [(0.5, 1.0, 2.0 / 3.0), Z, (0.5, 1.0, 2.0 / 3.0)]),
        (
            "mild edema , small effusion .",
            "mild edema .",
            [(1.0, 0.5, 2.0 / 3.0), (0.5, 0.2, 2.0 / 7.0), (1.0, 0.5, 2.0 / 3.0)],
        ),
        ("a b c d", "d c b a", [ONE, Z, (0.25, 0.25, 0.25)]),
        ("a b c a b c", "a b c", [(1.0, 0.5, 2.0 / 3.0), (1.0, 0.4, 4.0 / 7.0), (1.0, 0.5, 2.0 / 3.0)]),
        ("p q r s", "q r", [(1.0, 0.5, 2.0 / 3.0), (1.0, 1.0 / 3.0, 0.5), (1.0, 0.5, 2.0 / 3.0)]),
        ("a b c d e f g h", "a c e g", [(1.0, 0.5, 2.0 / 3.0), Z, (1.0, 0.5, 2.0 / 3.0)]),
    ]
}

