//! Serde adapters that write ndarray tables as plain nested JSON arrays
//! (`[[[...]]]`) instead of ndarray's `{v, dim, data}` layout.

use ndarray::{Array3, Array4};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

fn ragged<E: serde::de::Error>(what: &str) -> E {
    E::custom(format!("ragged nested array in {what}"))
}

macro_rules! nested_adapter {
    ($name:ident, $arr:ident, $elem:ty) => {
        pub mod $name {
            use super::*;

            pub fn serialize<S: Serializer>(a: &$arr<$elem>, s: S) -> Result<S::Ok, S::Error> {
                let (n0, n1, n2) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let mut out = Vec::with_capacity(n0);
                for i in 0..n0 {
                    let mut l1 = Vec::with_capacity(n1);
                    for j in 0..n1 {
                        let mut l2 = Vec::with_capacity(n2);
                        for k in 0..n2 {
                            l2.push(a.slice(ndarray::s![i, j, k, ..]).to_vec());
                        }
                        l1.push(l2);
                    }
                    out.push(l1);
                }
                out.serialize(s)
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(
                d: D,
            ) -> Result<$arr<$elem>, D::Error> {
                let raw = Vec::<Vec<Vec<Vec<$elem>>>>::deserialize(d)?;
                let n0 = raw.len();
                let n1 = raw.first().map_or(0, Vec::len);
                let n2 = raw.first().and_then(|x| x.first()).map_or(0, Vec::len);
                let n3 = raw
                    .first()
                    .and_then(|x| x.first())
                    .and_then(|x| x.first())
                    .map_or(0, Vec::len);
                let mut flat = Vec::with_capacity(n0 * n1 * n2 * n3);
                for l1 in raw {
                    if l1.len() != n1 {
                        return Err(ragged("4-d table"));
                    }
                    for l2 in l1 {
                        if l2.len() != n2 {
                            return Err(ragged("4-d table"));
                        }
                        for l3 in l2 {
                            if l3.len() != n3 {
                                return Err(ragged("4-d table"));
                            }
                            flat.extend(l3);
                        }
                    }
                }
                $arr::from_shape_vec((n0, n1, n2, n3), flat).map_err(D::Error::custom)
            }
        }
    };
}

macro_rules! nested_adapter3 {
    ($name:ident, $elem:ty) => {
        pub mod $name {
            use super::*;

            pub fn serialize<S: Serializer>(a: &Array3<$elem>, s: S) -> Result<S::Ok, S::Error> {
                let out: Vec<Vec<Vec<$elem>>> = a
                    .outer_iter()
                    .map(|m| m.outer_iter().map(|r| r.to_vec()).collect())
                    .collect();
                out.serialize(s)
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array3<$elem>, D::Error> {
                let raw = Vec::<Vec<Vec<$elem>>>::deserialize(d)?;
                let n0 = raw.len();
                let n1 = raw.first().map_or(0, Vec::len);
                let n2 = raw.first().and_then(|x| x.first()).map_or(0, Vec::len);
                let mut flat = Vec::with_capacity(n0 * n1 * n2);
                for l1 in raw {
                    if l1.len() != n1 {
                        return Err(ragged("3-d table"));
                    }
                    for l2 in l1 {
                        if l2.len() != n2 {
                            return Err(ragged("3-d table"));
                        }
                        flat.extend(l2);
                    }
                }
                Array3::from_shape_vec((n0, n1, n2), flat).map_err(D::Error::custom)
            }
        }
    };
}

nested_adapter3!(array3, f64);
nested_adapter3!(array3_u64, u64);
nested_adapter!(array4, Array4, f64);
nested_adapter!(array4_u64, Array4, u64);
