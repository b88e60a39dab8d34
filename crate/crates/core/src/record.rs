use std::fmt;

/// Whether a record carries a key or cancels one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Insert,
    DeleteSignal,
}

/// The unit stored in blocks.
///
/// Records order lexicographically on `(value, seq, kind)`. Since a delete
/// signal is always stamped later than the insert it cancels, and a value is
/// only re-inserted after its previous copy was deleted, a signal sorts
/// directly after its target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Record {
    pub value: u64,
    pub seq: u64,
    pub kind: Kind,
}

impl Record {
    pub const fn insert(value: u64, seq: u64) -> Self {
        Record {
            value,
            seq,
            kind: Kind::Insert,
        }
    }

    pub const fn delete_signal(value: u64, seq: u64) -> Self {
        Record {
            value,
            seq,
            kind: Kind::DeleteSignal,
        }
    }

    pub fn is_signal(&self) -> bool {
        self.kind == Kind::DeleteSignal
    }

    /// Smallest possible record carrying `value`.
    pub const fn lower_bound(value: u64) -> Self {
        Record {
            value,
            seq: 0,
            kind: Kind::Insert,
        }
    }

    /// Largest possible record carrying `value`.
    pub const fn upper_bound(value: u64) -> Self {
        Record {
            value,
            seq: u64::MAX,
            kind: Kind::DeleteSignal,
        }
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            Kind::Insert => write!(f, "+{}@{}", self.value, self.seq),
            Kind::DeleteSignal => write!(f, "-{}@{}", self.value, self.seq),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_sorts_right_after_its_insert() {
        let mut v = vec![
            Record::insert(5, 10),
            Record::delete_signal(5, 3),
            Record::insert(5, 1),
            Record::insert(4, 99),
            Record::insert(6, 0),
        ];
        v.sort();
        assert_eq!(
            v,
            vec![
                Record::insert(4, 99),
                Record::insert(5, 1),
                Record::delete_signal(5, 3),
                Record::insert(5, 10),
                Record::insert(6, 0),
            ]
        );
    }

    #[test]
    fn bounds_bracket_every_record_of_a_value() {
        let r = Record::delete_signal(7, 12);
        assert!(Record::lower_bound(7) <= r && r <= Record::upper_bound(7));
        assert!(Record::upper_bound(6) < Record::lower_bound(7));
    }
}
