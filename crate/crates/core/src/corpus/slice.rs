use super::dialog::Dialog;
use crate::error::{ensure, Result};

/// A window `[start, end)` over a dialog's utterance-token stream (turn
/// markers are not positions). Recurrent state at `start` is carried in from
/// the previous slice of the same dialog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub dialog: usize,
    /// Position of this slice among the dialog's slices.
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn tokens<'a, T>(&self, d: &'a Dialog<T>) -> impl Iterator<Item = &'a T> {
        d.tokens().skip(self.start).take(self.len())
    }
}

/// Tiles each dialog into consecutive windows of at most `slice_len` tokens.
pub fn slice_dialogs<T>(dialogs: &[Dialog<T>], slice_len: usize) -> Result<Vec<Slice>> {
    ensure!(slice_len >= 1, "slice length must be at least 1");
    let mut out = Vec::new();
    for (di, d) in dialogs.iter().enumerate() {
        out.extend(slice_dialog(di, d.num_tokens(), slice_len));
    }
    Ok(out)
}

pub(crate) fn slice_dialog(dialog: usize, n_tokens: usize, slice_len: usize) -> impl Iterator<Item = Slice> {
    (0..n_tokens.div_ceil(slice_len)).map(move |index| Slice {
        dialog,
        index,
        start: index * slice_len,
        end: ((index + 1) * slice_len).min(n_tokens),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialog, Turn};

    fn dialog_with(n: usize) -> Dialog<u32> {
        // utterances of 7 tokens (last one shorter)
        let mut utterances = Vec::new();
        let mut left = n;
        let mut next = 0u32;
        while left > 0 {
            let k = left.min(7);
            utterances.push((next..next + k as u32).collect());
            next += k as u32;
            left -= k;
        }
        Dialog {
            turns: vec![Turn { utterances }],
        }
    }

    #[test]
    fn tiles_into_windows() {
        let s = slice_dialogs(&[dialog_with(200)], 80).unwrap();
        let lens: Vec<usize> = s.iter().map(Slice::len).collect();
        assert_eq!(lens, [80, 80, 40]);
        let s = slice_dialogs(&[dialog_with(80)], 80).unwrap();
        assert_eq!(s.len(), 1);
        assert!(slice_dialogs(&[dialog_with(3)], 0).is_err());
    }

    #[test]
    fn concatenation_reproduces_stream() {
        let d = dialog_with(173);
        let s = slice_dialogs(std::slice::from_ref(&d), 80).unwrap();
        let joined: Vec<u32> = s.iter().flat_map(|sl| sl.tokens(&d).copied()).collect();
        let all: Vec<u32> = d.tokens().copied().collect();
        assert_eq!(joined, all);
        for w in s.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }
}
